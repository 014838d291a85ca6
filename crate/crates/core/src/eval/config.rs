//! Flat `key = value` experiment configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Every key is optional and
//! defaults to the value listed in [`ExperimentConfig::describe`]. Unknown
//! or repeated keys are errors. The seed can be overridden with the
//! `FEDFALL_SEED` environment variable.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregation::{SwaConfig, SwaMode};
use crate::baselines::{HbosThreshold, IForestConfig, MaxSamples};
use crate::data::ldpa::{ColumnMap, ColumnRef};
use crate::data::{PrepareConfig, TestSelection};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::nn::InitScheme;
use crate::secure::FixedPointCodec;

pub const SEED_ENV: &str = "FEDFALL_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// One model on the pooled training windows.
    Central,
    /// Weighted averaging, global model only at inference.
    FlFedavg,
    /// Robust aggregation with proximal local training, global model only.
    PflSwa,
    /// As `PflSwa` with global + client ensemble inference.
    #[default]
    EpflSwa,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Central, Scenario::FlFedavg, Scenario::PflSwa, Scenario::EpflSwa];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Central => "central",
            Scenario::FlFedavg => "fl_fedavg",
            Scenario::PflSwa => "pfl_swa",
            Scenario::EpflSwa => "epfl_swa",
        }
    }

    pub fn is_federated(self) -> bool {
        self != Scenario::Central
    }

    pub fn uses_swa(self) -> bool {
        matches!(self, Scenario::PflSwa | Scenario::EpflSwa)
    }

    pub fn uses_ensemble(self) -> bool {
        self == Scenario::EpflSwa
    }
}

/// Where a client's local model starts each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalStart {
    /// `global` for averaging scenarios, `persistent` for robust ones.
    #[default]
    Auto,
    /// Copy of the incoming global model.
    Global,
    /// The client's own model from the previous round.
    Persistent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    #[default]
    Plain,
    /// Updates travel as Paillier ciphertexts of fixed-point values.
    Encrypted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HbosThresholdMode {
    #[default]
    Normalized,
    TopFraction,
}

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse::<$t>().map_err(|e| e.to_string())
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
plain_value!(usize, u32, u64, f64, bool, String);

impl ConfigValue for Option<usize> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|e: std::num::ParseIntError| e.to_string())
        }
    }
    fn render(&self) -> String {
        self.map_or_else(|| "auto".to_string(), |v| v.to_string())
    }
}

macro_rules! enum_value {
    ($t:ty { $($variant:expr => $name:literal),* $(,)? }) => {
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($name => Ok($variant),)*
                    _ => Err(format!("expected one of: {}", [$($name),*].join(", "))),
                }
            }
            fn render(&self) -> String {
                match self {
                    $(v if *v == $variant => $name.to_string(),)*
                    _ => unreachable!(),
                }
            }
        }
    };
}
enum_value!(Scenario {
    Scenario::Central => "central",
    Scenario::FlFedavg => "fl_fedavg",
    Scenario::PflSwa => "pfl_swa",
    Scenario::EpflSwa => "epfl_swa",
});
enum_value!(LocalStart { LocalStart::Auto => "auto", LocalStart::Global => "global", LocalStart::Persistent => "persistent" });
enum_value!(Transport { Transport::Plain => "plain", Transport::Encrypted => "encrypted" });
enum_value!(SwaMode { SwaMode::Delta => "delta", SwaMode::Literal => "literal" });
enum_value!(Execution { Execution::Parallel => "parallel", Execution::Sequential => "sequential" });
enum_value!(InitScheme { InitScheme::Uniform => "uniform", InitScheme::Zeros => "zeros" });
enum_value!(HbosThresholdMode {
    HbosThresholdMode::Normalized => "normalized",
    HbosThresholdMode::TopFraction => "top_fraction",
});

impl ConfigValue for TestSelection {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        if s == "last" {
            Ok(TestSelection::Last)
        } else {
            s.parse()
                .map(TestSelection::Number)
                .map_err(|_| "expected `last` or a sequence number".to_string())
        }
    }
    fn render(&self) -> String {
        match self {
            TestSelection::Last => "last".into(),
            TestSelection::Number(n) => n.to_string(),
        }
    }
}

macro_rules! experiment_config {
    ($( $(#[$doc:meta])* $key:ident : $ty:ty = $default:expr, effective = $eff:expr; )*) => {
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        pub struct ExperimentConfig {
            $( $(#[$doc])* pub $key: $ty, )*
        }

        impl Default for ExperimentConfig {
            fn default() -> Self {
                Self { $( $key: $default, )* }
            }
        }

        impl ExperimentConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            /// Sets one key from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( stringify!($key) => {
                        self.$key = <$ty as ConfigValue>::parse_value(value)
                            .map_err(|e| Error::Config(format!("{key} = {value}: {e}")))?;
                    } )*
                    _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                }
                Ok(())
            }

            /// `(key, value, affects results)` for every key, in declaration order.
            pub fn entries(&self) -> Vec<(&'static str, String, bool)> {
                vec![$( (stringify!($key), self.$key.render(), $eff), )*]
            }
        }
    };
}

experiment_config! {
    seed: u64 = 0, effective = true;
    execution: Execution = Execution::Parallel, effective = false;
    scenario: Scenario = Scenario::EpflSwa, effective = true;
    /// Raw CSV input for `prepare-data`.
    data_path: String = String::new(), effective = true;
    dataset_cache: String = "dataset.bin".into(), effective = true;
    output_dir: String = "out".into(), effective = false;
    /// Comma-separated column indices or header names for sequence name,
    /// sensor tag, timestamp, date, x, y, z and activity.
    columns: String = "0,1,2,3,4,5,6,7".into(), effective = true;
    /// `auto`, `true` or `false`.
    has_header: String = "auto".into(), effective = true;
    window: usize = 20, effective = true;
    stride: usize = 1, effective = true;
    test_sequence: TestSelection = TestSelection::Last, effective = true;
    smote: bool = false, effective = true;
    smote_target: f64 = 0.25, effective = true;
    smote_k: usize = 5, effective = true;
    hidden_size: usize = 128, effective = true;
    init: InitScheme = InitScheme::Uniform, effective = true;
    /// Communication rounds (federated) or epochs (central).
    global_epochs: usize = 60, effective = true;
    client_epochs: usize = 30, effective = true;
    batch_size: usize = 32, effective = true;
    lr: f64 = 0.001, effective = true;
    mu: f64 = 0.01, effective = true;
    beta: f64 = 0.1, effective = true;
    alpha: f64 = 0.1, effective = true;
    swa_mode: SwaMode = SwaMode::Delta, effective = true;
    trimming: bool = true, effective = true;
    local_start: LocalStart = LocalStart::Auto, effective = true;
    classification_threshold: f64 = 0.3, effective = true;
    alert_threshold: f64 = 0.4, effective = true;
    feedback: bool = true, effective = true;
    feedback_noise: f64 = 0.0, effective = true;
    /// Share of each client's training windows held back as the live
    /// stream that alerts are raised on.
    feedback_stream_fraction: f64 = 0.1, effective = true;
    early_stopping: bool = true, effective = true;
    early_stop_patience: usize = 10, effective = true;
    validation_fraction: f64 = 0.15, effective = true;
    transport: Transport = Transport::Plain, effective = true;
    he_key_bits: u64 = 1024, effective = true;
    he_scale_bits: u32 = 20, effective = true;
    he_clip: f64 = 1.0e6, effective = true;
    hbos_bins: Option<usize> = None, effective = true;
    hbos_threshold_mode: HbosThresholdMode = HbosThresholdMode::Normalized, effective = true;
    hbos_threshold: f64 = 0.5, effective = true;
    iforest_estimators: usize = 300, effective = true;
    iforest_max_samples: Option<usize> = None, effective = true;
    iforest_max_features: f64 = 0.5, effective = true;
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: `{k}` set twice", i + 1)));
            }
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, strip(e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies `FEDFALL_SEED` if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v} is not an unsigned integer")))?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{}` is not key=value", o.as_ref())))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let unit_open = |v: f64| v > 0.0 && v < 1.0;
        for (name, v) in [
            ("window", self.window),
            ("stride", self.stride),
            ("hidden_size", self.hidden_size),
            ("global_epochs", self.global_epochs),
            ("client_epochs", self.client_epochs),
            ("batch_size", self.batch_size),
            ("smote_k", self.smote_k),
            ("early_stop_patience", self.early_stop_patience),
            ("iforest_estimators", self.iforest_estimators),
        ] {
            if v == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return fail(format!("mu must be non-negative, got {}", self.mu));
        }
        self.swa().validate()?;
        for (name, v) in [
            ("classification_threshold", self.classification_threshold),
            ("alert_threshold", self.alert_threshold),
            ("smote_target", self.smote_target),
        ] {
            if !unit_open(v) {
                return fail(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        for (name, v) in [
            ("feedback_noise", self.feedback_noise),
            ("feedback_stream_fraction", self.feedback_stream_fraction),
            ("hbos_threshold", self.hbos_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(0.0..0.9).contains(&self.validation_fraction) {
            return fail(format!("validation_fraction must lie in [0, 0.9), got {}", self.validation_fraction));
        }
        if self.feedback_stream_fraction + self.validation_fraction >= 0.9 {
            return fail("validation and feedback fractions leave too little training data".into());
        }
        if !(self.iforest_max_features > 0.0 && self.iforest_max_features <= 1.0) {
            return fail(format!("iforest_max_features must lie in (0, 1], got {}", self.iforest_max_features));
        }
        if self.he_key_bits < 128 || self.he_key_bits % 2 == 1 {
            return fail(format!("he_key_bits must be even and at least 128, got {}", self.he_key_bits));
        }
        self.codec()?;
        if !matches!(self.has_header.as_str(), "auto" | "true" | "false") {
            return fail(format!("has_header must be auto, true or false, got {}", self.has_header));
        }
        self.column_map()?;
        Ok(())
    }

    pub fn swa(&self) -> SwaConfig {
        SwaConfig {
            beta: self.beta,
            alpha: self.alpha,
            mode: self.swa_mode,
            trimming: self.trimming,
        }
    }

    pub fn codec(&self) -> Result<FixedPointCodec> {
        FixedPointCodec::new(self.he_scale_bits, self.he_clip).map_err(|e| Error::Config(strip(e)))
    }

    pub fn prepare(&self) -> PrepareConfig {
        PrepareConfig {
            window: self.window,
            stride: self.stride,
            seed: self.seed,
            test_selection: self.test_sequence,
        }
    }

    pub fn column_map(&self) -> Result<ColumnMap> {
        let parts: Vec<&str> = self.columns.split(',').map(str::trim).collect();
        if parts.len() != 8 {
            return Err(Error::Config(format!("columns must list 8 entries, got {}", parts.len())));
        }
        let r = |s: &str| match s.parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.to_string()),
        };
        Ok(ColumnMap {
            sequence_name: r(parts[0]),
            sensor_tag: r(parts[1]),
            timestamp: r(parts[2]),
            date: r(parts[3]),
            x: r(parts[4]),
            y: r(parts[5]),
            z: r(parts[6]),
            activity: r(parts[7]),
            has_header: match self.has_header.as_str() {
                "true" => Some(true),
                "false" => Some(false),
                _ => None,
            },
        })
    }

    pub fn hbos_threshold(&self) -> HbosThreshold {
        match self.hbos_threshold_mode {
            HbosThresholdMode::Normalized => HbosThreshold::Normalized(self.hbos_threshold),
            HbosThresholdMode::TopFraction => HbosThreshold::TopFraction(self.hbos_threshold),
        }
    }

    pub fn iforest(&self) -> IForestConfig {
        IForestConfig {
            n_estimators: self.iforest_estimators,
            max_samples: self.iforest_max_samples.map_or(MaxSamples::Auto, MaxSamples::Count),
            max_features: self.iforest_max_features,
            seed: self.seed,
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        PathBuf::from(&self.output_dir)
    }

    /// Canonical `key = value` text of every key, sorted.
    pub fn to_text(&self) -> String {
        let mut e = self.entries();
        e.sort_by(|a, b| a.0.cmp(b.0));
        let mut out = String::new();
        for (k, v, _) in e {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// SHA-256 (hex) over the sorted result-affecting keys.
    pub fn fingerprint(&self) -> String {
        let mut e: Vec<_> = self.entries().into_iter().filter(|x| x.2).collect();
        e.sort_by(|a, b| a.0.cmp(b.0));
        let mut h = Sha256::new();
        for (k, v, _) in e {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) | Error::InvalidInput(m) => m,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let d = ExperimentConfig::default();
        d.validate().unwrap();
        assert_eq!(d.hidden_size, 128);
        assert_eq!(d.client_epochs, 30);
        assert_eq!(ExperimentConfig::parse(&d.to_text()).unwrap(), d);
    }

    #[test]
    fn parse_and_reject() {
        let c = ExperimentConfig::parse("# demo\nscenario = pfl_swa\nlr=0.01 # faster\nhbos_bins = 12\n").unwrap();
        assert_eq!(c.scenario, Scenario::PflSwa);
        assert_eq!(c.lr, 0.01);
        assert_eq!(c.hbos_bins, Some(12));
        assert!(ExperimentConfig::parse("nope = 1").is_err());
        assert!(ExperimentConfig::parse("lr = 1\nlr = 2").is_err());
        assert!(ExperimentConfig::parse("beta = 0.5").is_err());
        assert!(ExperimentConfig::parse("classification_threshold = 1.0").is_err());
        assert!(ExperimentConfig::parse("swa_mode = sideways").is_err());
        assert!(ExperimentConfig::parse("columns = 1,2").is_err());
    }

    #[test]
    fn fingerprint_tracks_effective_keys() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        b.execution = Execution::Sequential;
        assert_eq!(a.fingerprint(), b.fingerprint());
        for (k, _, eff) in a.entries() {
            if !eff {
                continue;
            }
            let mut c = a.clone();
            let alt = match k {
                "scenario" => "central",
                "data_path" | "dataset_cache" => "x.bin",
                "columns" => "7,6,5,4,3,2,1,0",
                "has_header" => "true",
                "test_sequence" => "2",
                "smote" => "true",
                "trimming" => "false",
                "feedback" | "early_stopping" => "false",
                "init" => "zeros",
                "swa_mode" => "literal",
                "local_start" => "global",
                "transport" => "encrypted",
                "hbos_threshold_mode" => "top_fraction",
                "hbos_bins" | "iforest_max_samples" => "7",
                "he_key_bits" => "512",
                _ => "0.2",
            };
            let alt = if c.set(k, alt).is_err() { "3" } else { alt };
            c.set(k, alt).unwrap();
            assert_ne!(a.fingerprint(), c.fingerprint(), "{k}");
        }
    }
}
