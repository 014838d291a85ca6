use fedfall_core::aggregation::SwaConfig;
use fedfall_core::data::synthetic::{separable_clients, separable_split};
use fedfall_core::data::SequenceWindow;
use fedfall_core::eval::{ExperimentConfig, Scenario, Transport};
use fedfall_core::exec::Execution;
use fedfall_core::federation::{
    aggregate, collect_updates, run_round, run_simulation, ClientState, RoundConfig, RoundRecord, ServerState,
    Strategy,
};
use fedfall_core::nn::{Architecture, InitScheme, ModelParams};
use fedfall_core::secure::keygen;
use fedfall_core::seed;

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.apply_overrides(&[
        "hidden_size=4",
        "global_epochs=3",
        "client_epochs=1",
        "batch_size=16",
        "seed=11",
    ])
    .unwrap();
    cfg
}

fn clients(n: usize, init: &ModelParams, epochs: usize) -> Vec<ClientState> {
    separable_clients(n, 48, 16, 5, 3, 0.8, 4)
        .into_iter()
        .enumerate()
        .map(|(i, (train, test))| {
            ClientState::new(format!("c{i}"), train, Vec::new(), test, Vec::new(), init.clone(), i as u64, epochs).unwrap()
        })
        .collect()
}

fn init() -> ModelParams {
    ModelParams::init(Architecture::new(3, 4), InitScheme::Uniform, 1).unwrap()
}

#[test]
fn clients_only_read_their_own_data() {
    let split = separable_split(5, 40, 20, 5, 3, 0.8, 2);
    for scenario in [Scenario::FlFedavg, Scenario::PflSwa, Scenario::EpflSwa] {
        let out = run_simulation(&split, &small_config(), scenario, Execution::Parallel).unwrap();
        assert_eq!(out.audit.len(), 5);
        for (owner, reads) in &out.audit {
            assert!(reads.keys().all(|r| r == owner), "{scenario:?}: {owner} read by {reads:?}");
            assert!(reads[owner] > 0);
        }
    }
}

#[test]
fn parallel_and_sequential_runs_agree_bitwise() {
    let split = separable_split(5, 40, 20, 5, 3, 0.8, 3);
    for scenario in Scenario::ALL {
        let a = run_simulation(&split, &small_config(), scenario, Execution::Sequential).unwrap();
        let b = run_simulation(&split, &small_config(), scenario, Execution::Parallel).unwrap();
        assert_eq!(a.predictions, b.predictions, "{scenario:?}");
        assert_eq!(a.global, b.global);
        assert_eq!(a.log, b.log);
    }
}

#[test]
fn seeds_reproduce_and_differ() {
    let split = separable_split(5, 40, 20, 5, 3, 0.8, 3);
    let cfg = small_config();
    let a = run_simulation(&split, &cfg, Scenario::EpflSwa, Execution::Parallel).unwrap();
    let b = run_simulation(&split, &cfg, Scenario::EpflSwa, Execution::Parallel).unwrap();
    assert_eq!(a.global, b.global);
    let mut other = cfg.clone();
    other.seed += 1;
    let c = run_simulation(&split, &other, Scenario::EpflSwa, Execution::Parallel).unwrap();
    assert_ne!(a.global, c.global);
}

#[test]
fn separable_task_is_learned() {
    let split = separable_split(5, 80, 40, 5, 3, 1.0, 5);
    let mut cfg = small_config();
    cfg.apply_overrides(&["global_epochs=15", "lr=0.01", "alpha=0.5", "early_stopping=false"]).unwrap();
    for scenario in Scenario::ALL {
        let out = run_simulation(&split, &cfg, scenario, Execution::Parallel).unwrap();
        assert!(out.report.accuracy > 0.9, "{scenario:?}: {:?}", out.report);
    }
}

#[test]
fn identical_updates_leave_the_global_fixed() {
    let g = init().to_vector();
    let updates: Vec<_> = (0..5)
        .map(|i| fedfall_core::aggregation::ClientUpdate {
            client_id: format!("c{i}"),
            params: g.clone(),
            epochs_trained: 3,
            sample_count: 10,
        })
        .collect();
    let swa = aggregate(&g, &updates, Strategy::Swa, &SwaConfig::default(), Execution::Sequential).unwrap();
    assert_eq!(swa, g);
    let literal = SwaConfig {
        mode: fedfall_core::aggregation::SwaMode::Literal,
        alpha: 1.0,
        ..SwaConfig::default()
    };
    let scaled: Vec<_> = updates
        .iter()
        .map(|u| fedfall_core::aggregation::ClientUpdate {
            params: u.params.scaled(3.0),
            ..u.clone()
        })
        .collect();
    let lit = aggregate(&g, &scaled, Strategy::Swa, &literal, Execution::Sequential).unwrap();
    assert!(lit.linf_distance(&g) < 1e-15);
}

#[test]
fn zero_mu_matches_unpenalized_training() {
    let g = init();
    let mut a = clients(1, &g, 2);
    let mut b = a.clone();
    let oa = a[0].local_train(&g, 0.0, 16, 0.01, true, 0).unwrap().unwrap();
    let ob = b[0].local_train(&g, 1e-300, 16, 0.01, true, 0).unwrap().unwrap();
    assert!(oa.update.params.linf_distance(&ob.update.params) < 1e-15);
    assert!(oa.epoch_losses.iter().all(|(_, p)| *p == 0.0));
}

#[test]
fn large_mu_keeps_clients_near_the_global() {
    let g = init();
    let gv = g.to_vector();
    let drift = |mu: f64| {
        let mut c = clients(1, &g, 20);
        let o = c[0].local_train(&g, mu, 16, 0.01, true, 0).unwrap().unwrap();
        o.update.params.sub(&gv).unwrap().l2_norm()
    };
    let free = drift(0.0);
    let tied = drift(100.0);
    assert!(tied < 0.75 * free, "free {free} tied {tied}");
}

#[test]
fn restart_and_persistent_starts_differ() {
    let g = init();
    let mut c = clients(1, &g, 1);
    c[0].local_train(&g, 0.0, 16, 0.01, true, 0).unwrap();
    let after_first = c[0].local_params.clone();
    let mut persistent = c.clone();
    persistent[0].local_train(&g, 0.0, 16, 0.01, false, 1).unwrap();
    let mut restarted = c.clone();
    restarted[0].local_train(&g, 0.0, 16, 0.01, true, 1).unwrap();
    assert_ne!(persistent[0].local_params, restarted[0].local_params);
    assert_ne!(after_first, g);
}

#[test]
fn encrypted_rounds_match_plain_rounds() {
    let g = init();
    let keys = keygen(256, 3).unwrap();
    for strategy in [Strategy::Fedavg, Strategy::Swa] {
        let mut cfg = RoundConfig::default();
        cfg.client_epochs = 1;
        cfg.batch_size = 16;
        let mut plain_server = ServerState::new(g.clone(), 9);
        let mut plain_clients = clients(5, &g, 1);
        run_round(&mut plain_server, &mut plain_clients, &cfg, strategy, 0.01, Execution::Parallel).unwrap();

        cfg.transport = Transport::Encrypted;
        let mut enc_server = ServerState::new(g.clone(), 9);
        enc_server.keys = Some(keys.clone());
        let mut enc_clients = clients(5, &g, 1);
        let log = run_round(&mut enc_server, &mut enc_clients, &cfg, strategy, 0.01, Execution::Parallel).unwrap();
        let err = plain_server.global.to_vector().linf_distance(&enc_server.global.to_vector());
        assert!(err < 1e-5, "{strategy:?}: {err}");
        assert!(matches!(log.last(), Some(RoundRecord::Server { transport: Transport::Encrypted, .. })));
    }
}

#[test]
fn collected_updates_report_epochs_and_samples() {
    let g = init();
    let mut cs = clients(3, &g, 2);
    cs[1].dataset = fedfall_core::federation::PrivateDataset::new("c1", Vec::new());
    let (updates, log) =
        collect_updates(&g, &mut cs, &RoundConfig::default(), Strategy::Swa, 0.01, 0, Execution::Sequential).unwrap();
    assert_eq!(updates.len(), 2);
    assert!(updates.iter().all(|u| u.epochs_trained == 2 && u.sample_count == 48));
    assert!(matches!(log[1], RoundRecord::Client { skipped: true, .. }));
}

fn fall_stream(n: usize) -> Vec<SequenceWindow> {
    let (train, _) = separable_clients(1, 3 * n, 0, 5, 3, 2.0, 8).remove(0);
    train.into_iter().filter(|w| w.is_fall()).take(n).collect()
}

#[test]
fn alerts_grow_the_local_dataset() {
    let g = init();
    let mut c = clients(1, &g, 1).remove(0);
    let before = c.dataset.len();
    let stream = fall_stream(6);
    let mut rng = seed::rng(1);
    let mut alerts = 0;
    for (i, w) in stream.iter().enumerate() {
        let p = if i % 2 == 0 { 0.9 } else { 0.1 };
        if let Some(ev) = c.alert_and_feedback(w, p, 0.4, 0.0, 0, &mut rng) {
            assert_eq!(ev.response, ev.true_label);
            alerts += 1;
        }
    }
    assert_eq!(alerts, 3);
    assert_eq!(c.dataset.len(), before + alerts);
    let o = c.local_train(&g, 0.0, 16, 0.01, false, 1).unwrap().unwrap();
    assert_eq!(o.update.sample_count, before + alerts);
}

#[test]
fn noisy_oracle_flips_some_labels() {
    let g = init();
    let mut c = clients(1, &g, 1).remove(0);
    let stream = fall_stream(40);
    let mut rng = seed::rng(2);
    let flipped = stream
        .iter()
        .filter_map(|w| c.alert_and_feedback(w, 0.99, 0.4, 0.5, 0, &mut rng))
        .filter(|e| e.response != e.true_label)
        .count();
    assert!(flipped > 5 && flipped < 35, "{flipped}");
}

#[test]
fn feedback_windows_reach_the_next_round() {
    let split = separable_split(5, 60, 20, 5, 3, 1.5, 6);
    let mut cfg = small_config();
    cfg.apply_overrides(&["alert_threshold=0.01", "feedback_stream_fraction=0.2", "early_stopping=false"]).unwrap();
    let out = run_simulation(&split, &cfg, Scenario::EpflSwa, Execution::Parallel).unwrap();
    let mut checked = 0;
    for rec in &out.log {
        if let RoundRecord::Feedback { round, client, alerts, dataset_size } = rec {
            assert!(*alerts > 0);
            let next = out.log.iter().find_map(|r| match r {
                RoundRecord::Client { round: r2, client: c2, samples, .. } if *r2 == round + 1 && c2 == client => Some(*samples),
                _ => None,
            });
            if let Some(samples) = next {
                assert_eq!(samples, *dataset_size);
                checked += 1;
            }
        }
    }
    assert!(checked >= 5);
    assert!(out.report.run.as_ref().unwrap().feedback_events > 0);
    // non-ensemble scenarios reserve the stream but never consume it
    let fedavg = run_simulation(&split, &cfg, Scenario::FlFedavg, Execution::Parallel).unwrap();
    assert!(!fedavg.log.iter().any(|r| matches!(r, RoundRecord::Feedback { .. })));
}
