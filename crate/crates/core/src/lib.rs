//! Federated fall-detection simulator.
//!
//! Clients train a two-layer LSTM on private motion windows with a proximal
//! penalty toward the global model. The server combines their updates with
//! either weighted averaging or the robust specialized aggregation (epoch
//! normalization, coordinate-wise trimmed mean, exponential fusion).
//! Inference averages the global and per-client models. Supporting modules
//! cover the data pipeline, outlier-detection baselines, additively
//! homomorphic transport of updates, and metrics/configuration.

pub mod aggregation;
pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod federation;
pub mod nn;
pub mod params;
pub mod secure;
pub mod seed;

pub use error::{Error, Result};
pub use exec::Execution;
pub use params::{Manifest, ParameterFile, ParameterVector};
