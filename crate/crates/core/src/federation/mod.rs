//! Round-based orchestration: penalized local training, server-side
//! aggregation, ensemble inference and the alert/feedback loop.

pub mod client;
pub mod round;
pub mod simulation;

pub use client::{
    classify, ensemble_predict, stratified_holdout, ClientState, FeedbackEvent, LocalOutcome, PrivateDataset,
};
pub use round::{aggregate, collect_updates, run_round, RoundConfig, RoundRecord, ServerState, Strategy};
pub use simulation::{
    architecture, build_clients, early_stop_check, initial_model, partition_clients, run_simulation, ClientPartition,
    SimulationOutcome,
};
