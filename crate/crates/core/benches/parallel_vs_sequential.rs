//! Same workloads under `Execution::Sequential` and `Execution::Parallel`.
//! Build with `--no-default-features` to see the fallback without rayon.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fedfall_core::aggregation::trimmed_mean;
use fedfall_core::baselines::{iforest_fit, IForestConfig, MaxSamples};
use fedfall_core::data::synthetic::{separable_clients, separable_split};
use fedfall_core::eval::{ExperimentConfig, Scenario};
use fedfall_core::exec::Execution;
use fedfall_core::federation::run_simulation;
use fedfall_core::nn::{predict_proba, Architecture, InitScheme, ModelParams};
use fedfall_core::params::ParameterVector;
use fedfall_core::secure::{encrypt_vector, keygen, FixedPointCodec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn aggregation(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let updates: Vec<ParameterVector> = (0..10)
        .map(|_| ParameterVector::new((0..200_000).map(|_| rng.gen_range(-1.0..1.0)).collect()))
        .collect();
    let mut g = c.benchmark_group("trimmed_mean_10x200k");
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| trimmed_mean(black_box(&updates), 0.1, exec).unwrap()));
    }
    g.finish();
}

fn inference(c: &mut Criterion) {
    let (windows, _) = separable_clients(1, 2048, 0, 20, 9, 0.5, 2).remove(0);
    let params = ModelParams::init(Architecture::new(9, 32), InitScheme::Uniform, 3).unwrap();
    let mut g = c.benchmark_group("predict_proba_2048x20x9_h32");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| predict_proba(&params, black_box(&windows), exec).unwrap()));
    }
    g.finish();
}

fn isolation_forest(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rows: Vec<Vec<f64>> = (0..5000).map(|_| (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let cfg = IForestConfig {
        n_estimators: 200,
        max_samples: MaxSamples::Auto,
        max_features: 1.0,
        seed: 5,
    };
    let mut g = c.benchmark_group("iforest_fit_200_trees");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| iforest_fit(black_box(&rows), &cfg, exec).unwrap()));
    }
    g.finish();
}

fn encryption(c: &mut Criterion) {
    let keys = keygen(512, 6).unwrap();
    let codec = FixedPointCodec::new(20, 1e6).unwrap();
    let v = ParameterVector::new((0..256).map(|i| i as f64 * 1e-3).collect());
    let mut g = c.benchmark_group("paillier_encrypt_256_coords_512_bit");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| encrypt_vector(black_box(&v), &keys.public, &codec, 7, exec).unwrap()));
    }
    g.finish();
}

fn simulation(c: &mut Criterion) {
    let split = separable_split(5, 200, 50, 10, 9, 0.5, 8);
    let mut cfg = ExperimentConfig::default();
    cfg.apply_overrides(&["hidden_size=16", "global_epochs=2", "client_epochs=1", "early_stopping=false"])
        .unwrap();
    let mut g = c.benchmark_group("epfl_swa_two_rounds");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| run_simulation(&split, &cfg, Scenario::EpflSwa, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, aggregation, inference, isolation_forest, encryption, simulation);
criterion_main!(benches);
