//! Minibatch training loop shared by centralized and client training.

use rand::seq::SliceRandom;

use super::adam::{adam_step, AdamState};
use super::forward::{model_backward, model_forward, update_running_stats, Mode};
use super::loss::{bce_loss, fedprox_penalty_params};
use super::model::ModelParams;
use crate::data::SequenceWindow;
use crate::error::{Error, Result};
use crate::seed::SimRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// Mean BCE over batches.
    pub bce: f64,
    /// Mean proximal penalty over batches.
    pub penalty: f64,
    pub batches: usize,
}

impl EpochStats {
    pub fn total(&self) -> f64 {
        self.bce + self.penalty
    }
}

/// One shuffled pass over `data`, minimizing `BCE + mu·‖w − w_g‖²` when a
/// proximal anchor is given.
pub fn train_epoch(
    params: &mut ModelParams,
    adam: &mut AdamState,
    data: &[SequenceWindow],
    batch_size: usize,
    lr: f64,
    prox: Option<(&ModelParams, f64)>,
    rng: &mut SimRng,
) -> Result<EpochStats> {
    if data.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut bce_sum = 0.0;
    let mut pen_sum = 0.0;
    let mut batches = 0;
    for chunk in order.chunks(batch_size) {
        let batch: Vec<&SequenceWindow> = chunk.iter().map(|i| &data[*i]).collect();
        let labels: Vec<u8> = batch.iter().map(|w| w.label).collect();
        let (probs, cache) = model_forward(params, &batch, Mode::Train)?;
        let (bce, dprobs) = bce_loss(&probs, &labels)?;
        let mut grads = model_backward(&cache, &dprobs, params)?;
        let penalty = match prox {
            Some((global, mu)) => fedprox_penalty_params(params, global, mu, &mut grads),
            None => 0.0,
        };
        update_running_stats(params, &cache);
        adam_step(adam, params, &grads, lr)?;
        bce_sum += bce;
        pen_sum += penalty;
        batches += 1;
    }
    Ok(EpochStats {
        bce: bce_sum / batches as f64,
        penalty: pen_sum / batches as f64,
        batches,
    })
}

/// Mean BCE of `params` on `data` in eval mode.
pub fn evaluate_loss(params: &ModelParams, data: &[SequenceWindow]) -> Result<f64> {
    let probs = super::predict_proba(params, data, crate::exec::Execution::Sequential)?;
    let labels: Vec<u8> = data.iter().map(|w| w.label).collect();
    Ok(bce_loss(&probs, &labels)?.0)
}
