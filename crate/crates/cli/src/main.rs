//! `fedfall` command-line runner.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use fedfall_core::baselines::{hbos_fit, iforest_fit, save_json};
use fedfall_core::data::prepare::{align_all, split_records, window_and_split};
use fedfall_core::data::synthetic::{generate_sequences, SyntheticSpec};
use fedfall_core::data::{dataset_summary, load_dataset, parse_ldpa_csv, save_dataset, AlignedSequence};
use fedfall_core::eval::{
    compute_metrics, load_predictions, save_predictions, ConfusionCounts, ExperimentConfig, MetricsReport,
};
use fedfall_core::exec::Execution;
use fedfall_core::federation::{run_simulation, RoundRecord, SimulationOutcome};
use fedfall_core::nn::gradcheck_suite;
use fedfall_core::params::ParameterVector;
use fedfall_core::secure::{keygen, secure_mean_demo};
use fedfall_core::{seed, Error};

#[derive(Parser, Debug)]
#[command(name = "fedfall", version, about = "Federated fall-detection simulator")]
struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse, align and window raw data into a dataset cache.
    PrepareData(PrepareArgs),
    /// Run one scenario and write its report, predictions and round log.
    Train(TrainArgs),
    /// Recompute metrics from a saved prediction file.
    Evaluate(EvaluateArgs),
    /// Train once per value of a numeric parameter.
    Sweep(SweepArgs),
    /// Encrypted mean of random client updates versus the plaintext mean.
    SecureDemo(SecureDemoArgs),
    /// Finite-difference gradient check on random small models.
    Gradcheck(GradcheckArgs),
    /// Fit and evaluate a point-wise anomaly detector.
    Baseline(BaselineArgs),
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed (and FEDFALL_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// Extra key=value overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug, Clone)]
struct SourceArgs {
    /// Raw LDPA-style CSV.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Generate a synthetic dataset instead of reading a CSV.
    #[arg(long)]
    synthetic: bool,
    /// Records per synthetic sequence.
    #[arg(long, default_value_t = 1200)]
    synthetic_records: usize,
}

#[derive(Args, Debug)]
struct PrepareArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    source: SourceArgs,
    /// Output cache path (defaults to the config's dataset_cache).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    scenario: Option<String>,
    /// Dataset cache (defaults to the config's dataset_cache).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory (defaults to the config's output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Prediction CSV written by `train`.
    #[arg(long)]
    predictions: PathBuf,
    /// Write the recomputed report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fail unless the recomputed metrics equal this report's.
    #[arg(long)]
    expect: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// `key=start:stop:step`, inclusive of `stop`.
    #[arg(long)]
    param: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SecureDemoArgs {
    #[arg(long, default_value_t = 5)]
    clients: usize,
    #[arg(long, default_value_t = 1000)]
    dim: usize,
    #[arg(long, default_value_t = 256)]
    key_bits: u64,
    #[arg(long, default_value_t = 20)]
    scale_bits: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    models: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    source: SourceArgs,
    /// hbos or iforest
    #[arg(long)]
    method: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let validation = e.chain().any(|c| {
        c.downcast_ref::<Error>().is_some_and(Error::is_validation) || c.downcast_ref::<UsageError>().is_some()
    });
    if validation {
        1
    } else {
        2
    }
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match cli.command {
        Command::PrepareData(a) => prepare_data(a, exec),
        Command::Train(a) => train(a, exec),
        Command::Evaluate(a) => evaluate(a),
        Command::Sweep(a) => sweep(a, exec),
        Command::SecureDemo(a) => secure_demo(a, exec),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Baseline(a) => baseline(a, exec),
    }
}

fn load_config(args: &ConfigArgs, scenario: Option<&str>) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(s) = scenario {
        cfg.set("scenario", s)?;
    }
    cfg.apply_overrides(&args.overrides)?;
    Ok(cfg)
}

fn aligned_source(src: &SourceArgs, cfg: &ExperimentConfig, exec: Execution) -> anyhow::Result<Vec<AlignedSequence>> {
    if src.synthetic {
        let spec = SyntheticSpec {
            records_per_sequence: src.synthetic_records,
            window: cfg.window,
            seed: cfg.seed,
            ..SyntheticSpec::default()
        };
        return Ok(generate_sequences(&spec));
    }
    let path = match &src.data {
        Some(p) => p.clone(),
        None if !cfg.data_path.is_empty() => PathBuf::from(&cfg.data_path),
        None => return Err(usage("no input: pass --data, --synthetic or set data_path")),
    };
    let parsed = parse_ldpa_csv(&path, &cfg.column_map()?)?;
    if parsed.malformed_rows > 0 {
        log::warn!("{} malformed rows skipped, first: {:?}", parsed.malformed_rows, parsed.malformed_examples.first());
    }
    let (aligned, skipped) = align_all(parsed.records, cfg.seed, exec);
    for s in skipped {
        log::warn!("sequence skipped: {s}");
    }
    Ok(aligned)
}

fn prepare_data(a: PrepareArgs, exec: Execution) -> anyhow::Result<()> {
    let cfg = load_config(&a.config, None)?;
    let aligned = aligned_source(&a.source, &cfg, exec)?;
    let split = window_and_split(&aligned, &cfg.prepare(), exec)?;
    let out = a.out.unwrap_or_else(|| PathBuf::from(&cfg.dataset_cache));
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    save_dataset(&out, &split)?;
    print!("{}", dataset_summary(&split));
    println!("wrote {}", out.display());
    Ok(())
}

fn write_outputs(dir: &Path, cfg: &ExperimentConfig, out: &SimulationOutcome) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.cfg"), cfg.to_text())?;
    out.report.save(&dir.join("report.json"))?;
    let header = fedfall_core::eval::ReportHeader {
        scenario: out.report.scenario,
        seed: out.report.seed,
        config_fingerprint: out.report.config_fingerprint.clone(),
        threshold: out.report.threshold,
    };
    save_predictions(&dir.join("predictions.csv"), &header, &out.predictions)?;
    let mut log = fs::File::create(dir.join("round_log.jsonl"))?;
    for r in &out.log {
        writeln!(log, "{}", serde_json::to_string(r)?)?;
    }
    // per-epoch loss and validation curves for external plotting
    let mut curve = fs::File::create(dir.join("curves.csv"))?;
    writeln!(curve, "round,train_loss,validation_loss,validation_recall,validation_f1")?;
    for r in &out.log {
        if let RoundRecord::Server {
            round,
            train_loss,
            validation_loss,
            validation_recall,
            validation_f1,
            ..
        } = r
        {
            let f = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            writeln!(
                curve,
                "{round},{},{},{},{}",
                f(train_loss),
                f(validation_loss),
                f(validation_recall),
                f(validation_f1)
            )?;
        }
    }
    out.global.to_parameter_file()?.save(&dir.join("global.params"))?;
    Ok(())
}

fn print_report(r: &MetricsReport) {
    println!(
        "{}: accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4}{}",
        r.scenario.name(),
        r.accuracy,
        r.precision,
        r.recall,
        r.f1,
        if !r.degenerate.is_empty() { " (degenerate)" } else { "" }
    );
    for (client, c) in &r.per_client {
        match c.recall {
            Some(v) => println!("  {client}: recall {v:.4} ({} positives)", c.positives),
            None => println!("  {client}: recall undefined (no positives)"),
        }
    }
}

fn train_one(cfg: &ExperimentConfig, dataset: &Path, out_dir: &Path, exec: Execution) -> anyhow::Result<MetricsReport> {
    let split = load_dataset(dataset)?;
    let exec = if cfg.execution == Execution::Sequential { Execution::Sequential } else { exec };
    let outcome = run_simulation(&split, cfg, cfg.scenario, exec)?;
    write_outputs(out_dir, cfg, &outcome)?;
    Ok(outcome.report)
}

fn train(a: TrainArgs, exec: Execution) -> anyhow::Result<()> {
    let cfg = load_config(&a.config, a.scenario.as_deref())?;
    let dataset = a.dataset.unwrap_or_else(|| PathBuf::from(&cfg.dataset_cache));
    let out = a.out.unwrap_or_else(|| cfg.output_dir());
    let report = train_one(&cfg, &dataset, &out, exec)?;
    print_report(&report);
    println!("wrote {}", out.join("report.json").display());
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let (header, records) = load_predictions(&a.predictions)?;
    let report = MetricsReport::from_predictions(&header, &records)?;
    print_report(&report);
    if let Some(p) = &a.out {
        report.save(p)?;
    }
    if let Some(p) = &a.expect {
        let expected = MetricsReport::load(p)?;
        if !report.same_metrics(&expected) {
            bail!("recomputed metrics differ from {}", p.display());
        }
        println!("metrics match {}", p.display());
    }
    Ok(())
}

/// Inclusive grid `start, start+step, ...` up to `stop` (with a small
/// tolerance so `0.3:0.5:0.05` ends at 0.5).
fn parse_grid(spec: &str) -> anyhow::Result<(String, Vec<f64>)> {
    let (key, range) = spec
        .split_once('=')
        .ok_or_else(|| usage(format!("--param `{spec}` is not key=start:stop:step")))?;
    let parts: Vec<f64> = range
        .split(':')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| usage(format!("--param `{spec}`: {e}")))?;
    let [start, stop, step] = parts[..] else {
        return Err(usage(format!("--param `{spec}` needs start:stop:step")));
    };
    if !(step > 0.0) || stop < start {
        return Err(usage(format!("--param `{spec}`: need step > 0 and stop >= start")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    let values = (0..=n).map(|i| {
        // round away accumulated binary noise
        let v = start + step * i as f64;
        (v * 1e9).round() / 1e9
    });
    Ok((key.trim().to_string(), values.collect()))
}

fn sweep(a: SweepArgs, exec: Execution) -> anyhow::Result<()> {
    let base = load_config(&a.config, a.scenario.as_deref())?;
    let (key, values) = parse_grid(&a.param)?;
    let dataset = a.dataset.clone().unwrap_or_else(|| PathBuf::from(&base.dataset_cache));
    let root = a.out.clone().unwrap_or_else(|| base.output_dir());
    let mut rows = Vec::new();
    for v in values {
        let mut cfg = base.clone();
        let text = if v.fract() == 0.0 && !key.contains("threshold") { format!("{}", v as i64) } else { format!("{v}") };
        cfg.set(&key, &text)?;
        cfg.validate()?;
        let dir = root.join(format!("{key}={text}"));
        let report = train_one(&cfg, &dataset, &dir, exec)?;
        println!("{key}={text}: recall {:.4} f1 {:.4}", report.recall, report.f1);
        rows.push(format!("{text},{},{},{},{}", report.accuracy, report.precision, report.recall, report.f1));
    }
    let mut summary = fs::File::create(root.join("sweep.csv"))?;
    writeln!(summary, "{key},accuracy,precision,recall,f1")?;
    for r in rows {
        writeln!(summary, "{r}")?;
    }
    Ok(())
}

fn secure_demo(a: SecureDemoArgs, exec: Execution) -> anyhow::Result<()> {
    use rand::Rng;
    if a.clients == 0 || a.dim == 0 {
        return Err(usage("--clients and --dim must be positive"));
    }
    let mut rng = seed::rng(seed::derive(a.seed, "secure-demo-updates"));
    let updates: Vec<ParameterVector> = (0..a.clients)
        .map(|_| ParameterVector::new((0..a.dim).map(|_| rng.gen_range(-1.0..1.0)).collect()))
        .collect();
    let keys = keygen(a.key_bits, a.seed)?;
    let codec = fedfall_core::secure::FixedPointCodec::new(a.scale_bits, 1e6)?;
    let started = std::time::Instant::now();
    let secure = secure_mean_demo(&updates, &keys, &codec, a.seed, exec)?;
    let elapsed = started.elapsed().as_secs_f64();
    let plain = fedfall_core::aggregation::fedavg(
        &updates
            .iter()
            .enumerate()
            .map(|(i, u)| fedfall_core::aggregation::ClientUpdate {
                client_id: format!("c{i}"),
                params: u.clone(),
                epochs_trained: 1,
                sample_count: 1,
            })
            .collect::<Vec<_>>(),
    )?;
    let err = secure.mean.linf_distance(&plain);
    println!(
        "{} clients, {} coordinates, {}-bit key: max |secure - plain| = {err:.3e} (clipped {}) in {elapsed:.2}s",
        a.clients, a.dim, a.key_bits, secure.clipped
    );
    if err >= 1e-5 {
        bail!("secure mean deviates from plaintext mean by {err:.3e}");
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> anyhow::Result<()> {
    let cases = gradcheck_suite(a.models, a.seed)?;
    let mut worst = 0.0f64;
    for (i, c) in cases.iter().enumerate() {
        println!("model {i:2} H={}: max relative error {:.3e}", c.hidden_size, c.report.max_relative_error);
        worst = worst.max(c.report.max_relative_error);
    }
    println!("max relative error {worst:.3e}");
    if !(worst < a.tolerance) {
        bail!("gradient check failed: {worst:.3e} >= {:.1e}", a.tolerance);
    }
    Ok(())
}

fn baseline(a: BaselineArgs, exec: Execution) -> anyhow::Result<()> {
    let cfg = load_config(&a.config, None)?;
    let aligned = aligned_source(&a.source, &cfg, exec)?;
    let (train, test) = split_records(&aligned, cfg.prepare().test_selection);
    if train.is_empty() || test.is_empty() {
        return Err(usage("not enough sequences for a train/test split"));
    }
    let rows: Vec<&[f64]> = train.iter().map(|r| r.features.as_slice()).collect();
    let predictions: Vec<u8>;
    let out = a.out.unwrap_or_else(|| cfg.output_dir());
    fs::create_dir_all(&out)?;
    match a.method.as_str() {
        "hbos" => {
            let model = hbos_fit(&rows, cfg.hbos_bins, cfg.hbos_threshold())?;
            predictions = test.iter().map(|r| model.predict(&r.features)).collect();
            save_json(&model, &out.join("hbos.json"))?;
        }
        "iforest" => {
            let model = iforest_fit(&rows, &cfg.iforest(), exec)?;
            predictions = test.iter().map(|r| model.predict(&r.features)).collect();
            save_json(&model, &out.join("iforest.json"))?;
        }
        other => return Err(usage(format!("unknown method `{other}` (hbos or iforest)"))),
    }
    let labels: Vec<u8> = test.iter().map(|r| r.label).collect();
    let counts = ConfusionCounts::from_predictions(&predictions, &labels)?;
    let m = compute_metrics(&counts)?;
    println!(
        "{}: accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4} on {} test records",
        a.method,
        m.accuracy,
        m.precision,
        m.recall,
        m.f1,
        counts.total()
    );
    fs::write(
        out.join(format!("{}_metrics.json", a.method)),
        serde_json::to_string_pretty(&serde_json::json!({ "counts": counts, "metrics": m }))?,
    )?;
    Ok(())
}
