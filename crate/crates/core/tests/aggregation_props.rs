use fedfall_core::aggregation::{
    ema_fuse, fedavg, fednova_normalize, swa_aggregate, trim_count, trimmed_mean, trimmed_mean_m, ClientUpdate,
    SwaConfig, SwaMode,
};
use fedfall_core::exec::Execution;
use fedfall_core::params::ParameterVector;
use proptest::prelude::*;

/// Sort each column, drop `m` from both ends, add the rest left to right.
fn oracle(updates: &[Vec<f64>], m: usize) -> Vec<f64> {
    let n = updates.len();
    (0..updates[0].len())
        .map(|j| {
            let mut col: Vec<f64> = updates.iter().map(|u| u[j]).collect();
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let kept = &col[m..n - m];
            if kept.iter().all(|v| *v == kept[0]) {
                return kept[0];
            }
            kept.iter().fold(0.0, |s, v| s + v) / kept.len() as f64
        })
        .collect()
}

fn vectors(raw: &[Vec<f64>]) -> Vec<ParameterVector> {
    raw.iter().map(|v| ParameterVector::new(v.clone())).collect()
}

fn updates_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (3usize..=20, 1usize..=50).prop_flat_map(|(n, d)| {
        prop::collection::vec(prop::collection::vec(-100.0f64..100.0, d), n)
    })
}

fn client(id: usize, params: Vec<f64>, epochs: usize, samples: usize) -> ClientUpdate {
    ClientUpdate {
        client_id: format!("c{id}"),
        params: ParameterVector::new(params),
        epochs_trained: epochs,
        sample_count: samples,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn trimmed_mean_matches_sort_trim_average(raw in updates_strategy(), beta in 0.0f64..0.45) {
        let m = trim_count(raw.len(), beta);
        prop_assume!(m.is_ok());
        let m = m.unwrap();
        let got = trimmed_mean(&vectors(&raw), beta, Execution::Sequential).unwrap();
        let want = oracle(&raw, m);
        for (g, w) in got.as_slice().iter().zip(&want) {
            prop_assert_eq!(g.to_bits(), w.to_bits());
        }
    }

    #[test]
    fn trimmed_mean_is_order_invariant(raw in updates_strategy(), rot in 0usize..20) {
        let mut shifted = raw.clone();
        let r = rot % shifted.len();
        shifted.rotate_left(r);
        let a = trimmed_mean(&vectors(&raw), 0.1, Execution::Sequential).unwrap();
        let b = trimmed_mean(&vectors(&shifted), 0.1, Execution::Sequential).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn trimmed_mean_stays_within_retained_range(raw in updates_strategy()) {
        let n = raw.len();
        let m = trim_count(n, 0.2).unwrap();
        let got = trimmed_mean_m(&vectors(&raw), m, Execution::Sequential).unwrap();
        for (j, g) in got.as_slice().iter().enumerate() {
            let mut col: Vec<f64> = raw.iter().map(|u| u[j]).collect();
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            prop_assert!(*g >= col[m] && *g <= col[n - m - 1]);
        }
    }

    #[test]
    fn parallel_trimmed_mean_is_bitwise_sequential(raw in updates_strategy()) {
        let v = vectors(&raw);
        prop_assert_eq!(
            trimmed_mean(&v, 0.1, Execution::Sequential).unwrap(),
            trimmed_mean(&v, 0.1, Execution::Parallel).unwrap()
        );
    }

    #[test]
    fn literal_swa_collapses_to_fedavg(raw in updates_strategy(), e in 1usize..5, samples in 1usize..500) {
        let global = ParameterVector::new(vec![0.5; raw[0].len()]);
        // literal normalization divides weights by e, so scale them up front
        let updates: Vec<ClientUpdate> =
            raw.iter().enumerate().map(|(i, v)| client(i, v.iter().map(|x| x * e as f64).collect(), e, samples)).collect();
        let cfg = SwaConfig { beta: 0.1, alpha: 1.0, mode: SwaMode::Literal, trimming: false };
        let swa = swa_aggregate(&global, &updates, &cfg, Execution::Sequential).unwrap();
        let plain: Vec<ClientUpdate> = raw.iter().enumerate().map(|(i, v)| client(i, v.clone(), e, samples)).collect();
        let avg = fedavg(&plain).unwrap();
        prop_assert!(swa.linf_distance(&avg) <= 1e-12, "{}", swa.linf_distance(&avg));
    }

    #[test]
    fn fedavg_is_convex(raw in updates_strategy(), counts in prop::collection::vec(1usize..100, 20)) {
        let updates: Vec<ClientUpdate> =
            raw.iter().enumerate().map(|(i, v)| client(i, v.clone(), 1, counts[i])).collect();
        let avg = fedavg(&updates).unwrap();
        for (j, a) in avg.as_slice().iter().enumerate() {
            let lo = raw.iter().map(|u| u[j]).fold(f64::INFINITY, f64::min);
            let hi = raw.iter().map(|u| u[j]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(*a >= lo - 1e-9 && *a <= hi + 1e-9);
        }
    }

    #[test]
    fn delta_normalization_divides_by_epochs(g in prop::collection::vec(-1.0f64..1.0, 8), w in prop::collection::vec(-1.0f64..1.0, 8), e in 1usize..40) {
        let global = ParameterVector::new(g.clone());
        let u = client(0, w.clone(), e, 10);
        let d = fednova_normalize(&u, &global, SwaMode::Delta).unwrap();
        for j in 0..8 {
            prop_assert!((d.as_slice()[j] - (w[j] - g[j]) / e as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn ema_fusion_interpolates(g in prop::collection::vec(-1.0f64..1.0, 8), a in prop::collection::vec(-1.0f64..1.0, 8), alpha in 0.01f64..1.0) {
        let out = ema_fuse(&ParameterVector::new(g.clone()), &ParameterVector::new(a.clone()), alpha, SwaMode::Literal).unwrap();
        for j in 0..8 {
            let lo = g[j].min(a[j]);
            let hi = g[j].max(a[j]);
            prop_assert!(out.as_slice()[j] >= lo - 1e-15 && out.as_slice()[j] <= hi + 1e-15);
        }
    }
}

#[test]
fn three_clients_give_the_median() {
    let raw = vec![vec![1.0, -5.0, 0.3], vec![7.0, 2.0, 0.1], vec![-3.0, 9.0, 0.2]];
    let got = trimmed_mean(&vectors(&raw), 0.1, Execution::Sequential).unwrap();
    assert_eq!(got.as_slice(), &[1.0, 2.0, 0.2]);
}

#[test]
fn too_few_clients_cannot_be_trimmed() {
    assert!(trim_count(2, 0.1).is_err());
    assert!(trim_count(0, 0.1).is_err());
    assert_eq!(trim_count(10, 0.2).unwrap(), 2);
}

#[test]
fn one_huge_client_is_trimmed_away() {
    let global = ParameterVector::new(vec![0.0; 4]);
    let mut updates: Vec<ClientUpdate> = (0..5).map(|i| client(i, vec![0.1 * (i as f64 + 1.0); 4], 1, 100)).collect();
    updates[2].params = updates[2].params.scaled(1000.0);
    let swa = swa_aggregate(&global, &updates, &SwaConfig::default(), Execution::Sequential).unwrap();
    let avg = fedavg(&updates).unwrap();
    assert!(swa.l2_norm() < 0.1);
    assert!(avg.l2_norm() > 100.0);
}
