use std::collections::BTreeMap;
use std::time::Instant;

use super::client::{classify, stratified_holdout, ClientState, FeedbackEvent};
use super::round::{run_round, RoundConfig, RoundRecord, ServerState, Strategy};
use crate::data::{smote_oversample, DatasetSplit, SequenceWindow};
use crate::error::{Error, Result};
use crate::eval::{
    compute_metrics, ConfusionCounts, ExperimentConfig, MetricsReport, PredictionRecord, ReportHeader, RunSummary,
    Scenario, Transport,
};
use crate::exec::{self, Execution};
use crate::nn::{evaluate_loss, predict_proba, train_epoch, AdamState, Architecture, ModelParams};
use crate::secure::keygen;
use crate::seed;

/// `true` once the best score in `history` is at least `patience`
/// evaluations old. Ties do not count as improvement.
pub fn early_stop_check(history: &[f64], patience: usize) -> bool {
    let mut best = f64::NEG_INFINITY;
    let mut best_at = 0;
    for (i, s) in history.iter().enumerate() {
        if *s > best {
            best = *s;
            best_at = i;
        }
    }
    !history.is_empty() && history.len() - 1 - best_at >= patience
}

#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub report: MetricsReport,
    pub predictions: Vec<PredictionRecord>,
    pub log: Vec<RoundRecord>,
    pub global: ModelParams,
    pub locals: BTreeMap<String, ModelParams>,
    pub feedback: Vec<FeedbackEvent>,
    /// Per client, read counts of its private data by reader.
    pub audit: BTreeMap<String, BTreeMap<String, usize>>,
}

/// Per-client partition of the training windows.
#[derive(Debug, Clone)]
pub struct ClientPartition {
    pub client_id: String,
    pub train: Vec<SequenceWindow>,
    pub validation: Vec<SequenceWindow>,
    pub stream: Vec<SequenceWindow>,
    pub test: Vec<SequenceWindow>,
}

/// Seeded stratified validation and stream hold-outs, then optional SMOTE on
/// what remains for training.
pub fn partition_clients(split: &DatasetSplit, cfg: &ExperimentConfig) -> Result<Vec<ClientPartition>> {
    let mut out = Vec::new();
    for (id, data) in &split.clients {
        let mut rng = seed::rng(seed::derive(cfg.seed, &format!("partition-{id}")));
        let (rest, validation) = stratified_holdout(data.train.clone(), cfg.validation_fraction, &mut rng);
        let (mut train, stream) = if cfg.feedback {
            let frac = cfg.feedback_stream_fraction / (1.0 - cfg.validation_fraction);
            stratified_holdout(rest, frac, &mut rng)
        } else {
            (rest, Vec::new())
        };
        if cfg.smote {
            let s = smote_oversample(&train, cfg.smote_target, cfg.smote_k, seed::derive(cfg.seed, &format!("smote-{id}")))?;
            if let Some(why) = &s.skipped {
                log::warn!("client {id}: SMOTE skipped: {why}");
            }
            train = s.windows;
        }
        out.push(ClientPartition {
            client_id: id.clone(),
            train,
            validation,
            stream,
            test: data.test.clone(),
        });
    }
    Ok(out)
}

pub fn architecture(split: &DatasetSplit, cfg: &ExperimentConfig) -> Result<Architecture> {
    if split.features == 0 || split.steps == 0 {
        return Err(Error::invalid("dataset has no windows"));
    }
    let arch = Architecture::new(split.features, cfg.hidden_size);
    arch.validate()?;
    Ok(arch)
}

pub fn initial_model(arch: Architecture, cfg: &ExperimentConfig) -> Result<ModelParams> {
    ModelParams::init(arch, cfg.init, seed::derive(cfg.seed, "global-init"))
}

pub fn build_clients(parts: Vec<ClientPartition>, initial: &ModelParams, cfg: &ExperimentConfig) -> Result<Vec<ClientState>> {
    parts
        .into_iter()
        .map(|p| {
            let s = seed::derive(cfg.seed, &format!("client-{}", p.client_id));
            ClientState::new(p.client_id, p.train, p.validation, p.test, p.stream, initial.clone(), s, cfg.client_epochs)
        })
        .collect()
}

fn header(cfg: &ExperimentConfig, scenario: Scenario) -> ReportHeader {
    ReportHeader {
        scenario,
        seed: cfg.seed,
        config_fingerprint: cfg.fingerprint(),
        threshold: cfg.classification_threshold,
    }
}

fn prediction_records(client: &str, pairs: &[(SequenceWindow, f64)], threshold: f64) -> Vec<PredictionRecord> {
    pairs
        .iter()
        .map(|(w, p)| PredictionRecord {
            client: client.to_string(),
            sequence: w.origin.sequence.clone(),
            start: w.origin.start,
            label: w.label,
            probability: *p,
            prediction: classify(*p, threshold),
        })
        .collect()
}

fn score(c: &ConfusionCounts) -> Option<(f64, f64)> {
    compute_metrics(c).ok().map(|m| (m.recall, m.f1))
}

/// Runs one scenario end to end and evaluates on the held-out test
/// sequences.
pub fn run_simulation(split: &DatasetSplit, cfg: &ExperimentConfig, scenario: Scenario, exec: Execution) -> Result<SimulationOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let arch = architecture(split, cfg)?;
    let init = initial_model(arch, cfg)?;
    let parts = partition_clients(split, cfg)?;
    let mut out = if scenario.is_federated() {
        run_federated(parts, init, cfg, scenario, exec)?
    } else {
        run_central(parts, init, cfg, exec)?
    };
    if let Some(run) = out.report.run.as_mut() {
        run.elapsed_seconds = started.elapsed().as_secs_f64();
    }
    Ok(out)
}

fn run_central(parts: Vec<ClientPartition>, init: ModelParams, cfg: &ExperimentConfig, exec: Execution) -> Result<SimulationOutcome> {
    let train: Vec<SequenceWindow> = parts.iter().flat_map(|p| p.train.iter().cloned()).collect();
    let val: Vec<SequenceWindow> = parts.iter().flat_map(|p| p.validation.iter().cloned()).collect();
    let mut params = init;
    let mut adam = AdamState::new(&params);
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut log = Vec::new();
    let mut stopped_early = false;
    let mut epochs = 0;
    for epoch in 0..cfg.global_epochs {
        let mut rng = seed::rng(seed::derive_indexed(cfg.seed, "central-epoch", epoch as u64));
        let stats = train_epoch(&mut params, &mut adam, &train, cfg.batch_size, cfg.lr, None, &mut rng)?;
        epochs += 1;
        let (vr, vf, vl) = if val.is_empty() {
            (None, None, None)
        } else {
            let probs = predict_proba(&params, &val, exec)?;
            let mut c = ConfusionCounts::default();
            for (p, w) in probs.iter().zip(&val) {
                c.record(classify(*p, cfg.classification_threshold), w.label)?;
            }
            let (r, f) = score(&c).unzip();
            (r, f, Some(evaluate_loss(&params, &val)?))
        };
        log.push(RoundRecord::Server {
            round: epoch,
            strategy: Strategy::Fedavg,
            clients: 0,
            global_norm: params.to_vector().l2_norm(),
            transport: Transport::Plain,
            ensemble: false,
            validation_recall: vr,
            validation_f1: vf,
            train_loss: Some(stats.bce),
            validation_loss: vl,
        });
        match (vr, vf) {
            (Some(r), Some(f)) if cfg.early_stopping => {
                history.push(r + f);
                if history.len() == 1 || r + f > history[..history.len() - 1].iter().copied().fold(f64::NEG_INFINITY, f64::max) {
                    best = params.clone();
                    best_epoch = epoch;
                }
                if early_stop_check(&history, cfg.early_stop_patience) {
                    stopped_early = true;
                    break;
                }
            }
            _ => {
                best = params.clone();
                best_epoch = epoch;
            }
        }
    }
    let mut predictions = Vec::new();
    for p in &parts {
        let probs = predict_proba(&best, &p.test, exec)?;
        let pairs: Vec<(SequenceWindow, f64)> = p.test.iter().cloned().zip(probs).collect();
        predictions.extend(prediction_records(&p.client_id, &pairs, cfg.classification_threshold));
    }
    let mut report = MetricsReport::from_predictions(&header(cfg, Scenario::Central), &predictions)?;
    report.run = Some(RunSummary {
        rounds_completed: epochs,
        best_round: best_epoch,
        stopped_early,
        ensemble_inference: false,
        feedback_events: 0,
        elapsed_seconds: 0.0,
    });
    Ok(SimulationOutcome {
        report,
        predictions,
        log,
        global: best,
        locals: BTreeMap::new(),
        feedback: Vec::new(),
        audit: BTreeMap::new(),
    })
}

fn run_federated(
    parts: Vec<ClientPartition>,
    init: ModelParams,
    cfg: &ExperimentConfig,
    scenario: Scenario,
    exec: Execution,
) -> Result<SimulationOutcome> {
    let rc = RoundConfig::from_experiment(cfg)?;
    let strategy = RoundConfig::strategy_for(scenario);
    let ensemble = scenario.uses_ensemble();
    let use_feedback = cfg.feedback && ensemble;
    // the proximal term belongs to the penalized scenarios only
    let mu = if scenario.uses_swa() { cfg.mu } else { 0.0 };
    let mut clients = build_clients(parts, &init, cfg)?;
    if strategy == Strategy::Swa {
        rc.swa.trim_for(clients.len())?;
    }
    let mut server = ServerState::new(init, cfg.seed);
    if cfg.transport == Transport::Encrypted {
        server.keys = Some(keygen(cfg.he_key_bits, seed::derive(cfg.seed, "he-keys"))?);
    }
    let mut log = Vec::new();
    let mut history = Vec::new();
    let mut best_global = server.global.clone();
    let mut best_locals: Vec<ModelParams> = clients.iter().map(|c| c.local_params.clone()).collect();
    let mut best_round = 0;
    let mut stopped_early = false;
    let mut rounds = 0;
    let mut feedback_events = 0;
    for r in 0..cfg.global_epochs {
        let mut records = run_round(&mut server, &mut clients, &rc, strategy, mu, exec)?;
        rounds += 1;
        let global = &server.global;
        let counts = exec::map_slice_mut(exec, &mut clients, |c| c.validate(global, ensemble, cfg.classification_threshold));
        let mut total = ConfusionCounts::default();
        for c in counts {
            total = total.merge(&c?);
        }
        let val = score(&total);
        if let Some(RoundRecord::Server {
            ensemble: e,
            validation_recall,
            validation_f1,
            ..
        }) = records.last_mut()
        {
            *e = ensemble;
            *validation_recall = val.map(|v| v.0);
            *validation_f1 = val.map(|v| v.1);
        }
        log.append(&mut records);

        let improved = match val {
            Some((rec, f1)) if cfg.early_stopping => {
                let s = rec + f1;
                let better = history.iter().all(|h| s > *h);
                history.push(s);
                better
            }
            _ => true,
        };
        if improved {
            best_global = server.global.clone();
            best_locals = clients.iter().map(|c| c.local_params.clone()).collect();
            best_round = r;
        }

        if use_feedback {
            let global = &server.global;
            let alerts = exec::map_slice_mut(exec, &mut clients, |c| {
                let chunk = c.stream.len().div_ceil(cfg.global_epochs);
                c.monitor_stream(global, true, chunk, cfg.alert_threshold, cfg.feedback_noise, r)
            });
            for (c, a) in clients.iter().zip(alerts) {
                let a = a?;
                feedback_events += a;
                log.push(RoundRecord::Feedback {
                    round: r,
                    client: c.client_id.clone(),
                    alerts: a,
                    dataset_size: c.dataset.len(),
                });
            }
        }
        if cfg.early_stopping && early_stop_check(&history, cfg.early_stop_patience) {
            stopped_early = true;
            break;
        }
    }

    let mut predictions = Vec::new();
    for (c, local) in clients.iter_mut().zip(&best_locals) {
        c.local_params = local.clone();
    }
    let per_client = exec::map_slice_mut(exec, &mut clients, |c| c.test_predictions(&best_global, ensemble));
    for (c, pairs) in clients.iter().zip(per_client) {
        predictions.extend(prediction_records(&c.client_id, &pairs?, cfg.classification_threshold));
    }
    let mut report = MetricsReport::from_predictions(&header(cfg, scenario), &predictions)?;
    report.run = Some(RunSummary {
        rounds_completed: rounds,
        best_round,
        stopped_early,
        ensemble_inference: ensemble,
        feedback_events,
        elapsed_seconds: 0.0,
    });
    let mut audit = BTreeMap::new();
    let mut feedback = Vec::new();
    for c in &clients {
        let mut merged = c.dataset.audit().clone();
        for src in [c.validation.audit(), c.test.audit()] {
            for (k, v) in src {
                *merged.entry(k.clone()).or_default() += v;
            }
        }
        audit.insert(c.client_id.clone(), merged);
        feedback.extend(c.feedback_log.iter().cloned());
    }
    Ok(SimulationOutcome {
        report,
        predictions,
        log,
        global: best_global,
        locals: clients.iter().map(|c| (c.client_id.clone(), c.local_params.clone())).collect(),
        feedback,
        audit,
    })
}
