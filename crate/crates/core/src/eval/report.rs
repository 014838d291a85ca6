//! Prediction files and metrics reports.
//!
//! A prediction file is CSV with a `#`-prefixed preamble of `key=value`
//! pairs (`scenario`, `seed`, `fingerprint`, `threshold`) followed by the
//! columns `client,sequence,start,label,probability,prediction`.
//! Probabilities are written with round-trip precision.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Scenario;
use super::metrics::{compute_metrics, per_client_recall, recall_spread, ClientRecall, ConfusionCounts};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub client: String,
    pub sequence: String,
    pub start: usize,
    pub label: u8,
    pub probability: f64,
    pub prediction: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub scenario: Scenario,
    pub seed: u64,
    pub config_fingerprint: String,
    pub threshold: f64,
}

/// Training-run details that cannot be recovered from predictions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub rounds_completed: usize,
    pub best_round: usize,
    pub stopped_early: bool,
    pub ensemble_inference: bool,
    pub feedback_events: usize,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: Scenario,
    pub seed: u64,
    pub config_fingerprint: String,
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<String>,
    pub per_client: BTreeMap<String, ClientRecall>,
    pub recall_spread: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunSummary>,
}

impl MetricsReport {
    pub fn from_predictions(header: &ReportHeader, records: &[PredictionRecord]) -> Result<Self> {
        let mut per: BTreeMap<String, ConfusionCounts> = BTreeMap::new();
        let mut total = ConfusionCounts::default();
        for r in records {
            total.record(r.prediction, r.label)?;
            per.entry(r.client.clone()).or_default().record(r.prediction, r.label)?;
        }
        let m = compute_metrics(&total)?;
        let per_client = per_client_recall(&per);
        Ok(Self {
            scenario: header.scenario,
            seed: header.seed,
            config_fingerprint: header.config_fingerprint.clone(),
            threshold: header.threshold,
            counts: total,
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            degenerate: m.degenerate,
            recall_spread: recall_spread(&per_client),
            per_client,
            run: None,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Same metrics, ignoring the run summary.
    pub fn same_metrics(&self, other: &Self) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        a.run = None;
        b.run = None;
        a == b
    }
}

pub fn write_predictions(w: impl Write, header: &ReportHeader, records: &[PredictionRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(w);
    let fmt = |e: std::io::Error| Error::format("prediction file", e.to_string());
    writeln!(w, "# scenario={}", header.scenario.name()).map_err(fmt)?;
    writeln!(w, "# seed={}", header.seed).map_err(fmt)?;
    writeln!(w, "# fingerprint={}", header.config_fingerprint).map_err(fmt)?;
    writeln!(w, "# threshold={:?}", header.threshold).map_err(fmt)?;
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush().map_err(fmt)?;
    Ok(())
}

pub fn save_predictions(path: &Path, header: &ReportHeader, records: &[PredictionRecord]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_predictions(f, header, records)
}

pub fn read_predictions(r: impl std::io::Read) -> Result<(ReportHeader, Vec<PredictionRecord>)> {
    let mut reader = BufReader::new(r);
    let mut preamble = BTreeMap::new();
    let mut first_data = String::new();
    loop {
        let mut line = String::new();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| Error::format("prediction file", e.to_string()))?;
        if n == 0 {
            break;
        }
        if let Some(kv) = line.strip_prefix('#') {
            if let Some((k, v)) = kv.trim().split_once('=') {
                preamble.insert(k.trim().to_string(), v.trim().to_string());
            }
        } else {
            first_data = line;
            break;
        }
    }
    let get = |k: &str| {
        preamble
            .get(k)
            .cloned()
            .ok_or_else(|| Error::format("prediction file", format!("missing `{k}` in preamble")))
    };
    let scenario = match get("scenario")?.as_str() {
        "central" => Scenario::Central,
        "fl_fedavg" => Scenario::FlFedavg,
        "pfl_swa" => Scenario::PflSwa,
        "epfl_swa" => Scenario::EpflSwa,
        other => return Err(Error::format("prediction file", format!("unknown scenario `{other}`"))),
    };
    let bad = |k: &str| Error::format("prediction file", format!("bad `{k}` in preamble"));
    let header = ReportHeader {
        scenario,
        seed: get("seed")?.parse().map_err(|_| bad("seed"))?,
        config_fingerprint: get("fingerprint")?,
        threshold: get("threshold")?.parse().map_err(|_| bad("threshold"))?,
    };
    let rest = first_data.as_bytes().chain(reader);
    let mut csv_reader = csv::Reader::from_reader(rest);
    let mut records = Vec::new();
    for row in csv_reader.deserialize() {
        let r: PredictionRecord = row?;
        if r.label > 1 || r.prediction > 1 {
            return Err(Error::format("prediction file", "label/prediction must be 0 or 1"));
        }
        records.push(r);
    }
    Ok((header, records))
}

pub fn load_predictions(path: &Path) -> Result<(ReportHeader, Vec<PredictionRecord>)> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_predictions(f)
}
