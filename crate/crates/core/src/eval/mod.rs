//! Metrics, experiment configuration and report files.

pub mod config;
pub mod metrics;
pub mod report;

pub use config::{ExperimentConfig, HbosThresholdMode, LocalStart, Scenario, Transport, SEED_ENV};
pub use metrics::{compute_metrics, per_client_recall, recall_spread, ClientRecall, ConfusionCounts, Metrics};
pub use report::{
    load_predictions, read_predictions, save_predictions, write_predictions, MetricsReport, PredictionRecord,
    ReportHeader, RunSummary,
};
