//! Dense numerical core: the two-layer LSTM classifier, its exact gradients,
//! the loss terms and the Adam optimizer.

pub mod adam;
pub mod forward;
pub mod gradcheck;
pub mod loss;
pub mod matrix;
pub mod model;
pub mod train;

pub use adam::{adam_step, AdamState};
pub use forward::{model_backward, model_forward, sigmoid, update_running_stats, ForwardCache, Mode};
pub use gradcheck::{gradcheck_suite, gradient_check, gradient_check_with_penalty, GradCheckReport, SuiteCase};
pub use loss::{bce_loss, fedprox_penalty, fedprox_penalty_params, PROB_CLAMP};
pub use matrix::Matrix;
pub use model::{Architecture, InitScheme, LstmLayer, ModelParams};
pub use train::{evaluate_loss, train_epoch, EpochStats};

use crate::data::SequenceWindow;
use crate::error::Result;
use crate::exec::{self, Execution};

const PREDICT_CHUNK: usize = 256;

/// Eval-mode probabilities for every window. Windows are independent in eval
/// mode, so chunking (and running chunks in parallel) does not change results.
pub fn predict_proba(
    params: &ModelParams,
    windows: &[SequenceWindow],
    execution: Execution,
) -> Result<Vec<f64>> {
    if windows.is_empty() {
        return Ok(Vec::new());
    }
    let chunks: Vec<&[SequenceWindow]> = windows.chunks(PREDICT_CHUNK).collect();
    let parts = exec::map_slice(execution, &chunks, |chunk| {
        model_forward(params, chunk, Mode::Eval).map(|(p, _)| p)
    });
    let mut out = Vec::with_capacity(windows.len());
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}
