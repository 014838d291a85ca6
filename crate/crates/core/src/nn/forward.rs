//! Forward and backward passes of the sequence classifier.

use std::borrow::Borrow;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::model::{LstmLayer, ModelParams};
use crate::data::SequenceWindow;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Batch norm normalizes with batch statistics.
    Train,
    /// Batch norm uses the running estimates.
    Eval,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-sample activations of one LSTM layer.
#[derive(Debug, Clone)]
struct LayerTrace {
    /// `T × 4H`, activated gates (i, f, g, o).
    gates: Vec<f64>,
    /// `(T+1) × H`, row 0 is the zero initial state.
    cells: Vec<f64>,
    /// `(T+1) × H`
    hidden: Vec<f64>,
    /// `T × H`, tanh of the cell state.
    tanh_cells: Vec<f64>,
}

#[derive(Debug, Clone)]
struct SampleTrace {
    input: Vec<f64>,
    l1: LayerTrace,
    l2: LayerTrace,
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    mode: Mode,
    checksum: u64,
    steps: usize,
    samples: Vec<SampleTrace>,
    /// `B × H` last hidden state of layer 2.
    bn_input: Vec<f64>,
    bn_mean: Vec<f64>,
    /// Biased batch variance in train mode, running variance in eval mode.
    bn_var: Vec<f64>,
    bn_xhat: Vec<f64>,
    bn_out: Vec<f64>,
    /// `B × D`
    fc1_pre: Vec<f64>,
    fc1_act: Vec<f64>,
    logits: Vec<f64>,
    probs: Vec<f64>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.probs.len()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    /// Batch mean and biased variance of the last hidden state (train mode).
    pub fn batch_statistics(&self) -> (&[f64], &[f64]) {
        (&self.bn_mean, &self.bn_var)
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// Last hidden state of the second recurrent layer, `B × H`.
    pub fn last_hidden(&self) -> &[f64] {
        &self.bn_input
    }

    /// Normalized batch-norm input before the affine transform, `B × H`.
    pub fn normalized(&self) -> &[f64] {
        &self.bn_xhat
    }
}

fn check_finite(values: &[f64], layer: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalFailure {
            layer: layer.to_string(),
        })
    }
}

fn lstm_forward(layer: &LstmLayer, input: &[f64], steps: usize, in_dim: usize, h: usize) -> LayerTrace {
    let mut gates = vec![0.0; steps * 4 * h];
    let mut cells = vec![0.0; (steps + 1) * h];
    let mut hidden = vec![0.0; (steps + 1) * h];
    let mut tanh_cells = vec![0.0; steps * h];
    let mut z = vec![0.0; 4 * h];
    for t in 0..steps {
        z.copy_from_slice(layer.bias.data());
        layer.w_ih.mul_vec_acc(&input[t * in_dim..(t + 1) * in_dim], &mut z);
        layer.w_hh.mul_vec_acc(&hidden[t * h..(t + 1) * h], &mut z);
        let g = &mut gates[t * 4 * h..(t + 1) * 4 * h];
        for j in 0..h {
            g[j] = sigmoid(z[j]);
            g[h + j] = sigmoid(z[h + j]);
            g[2 * h + j] = z[2 * h + j].tanh();
            g[3 * h + j] = sigmoid(z[3 * h + j]);
        }
        for j in 0..h {
            let c = g[h + j] * cells[t * h + j] + g[j] * g[2 * h + j];
            cells[(t + 1) * h + j] = c;
            let tc = c.tanh();
            tanh_cells[t * h + j] = tc;
            hidden[(t + 1) * h + j] = g[3 * h + j] * tc;
        }
    }
    LayerTrace {
        gates,
        cells,
        hidden,
        tanh_cells,
    }
}

/// Runs the classifier on a batch.
///
/// Every window must have the same number of steps and `params.arch.input_size`
/// features. In [`Mode::Train`] batch norm uses the statistics of this batch;
/// call [`update_running_stats`] afterwards to fold them into the running
/// estimates.
pub fn model_forward<W: Borrow<SequenceWindow>>(
    params: &ModelParams,
    batch: &[W],
    mode: Mode,
) -> Result<(Vec<f64>, ForwardCache)> {
    let arch = params.arch;
    let f = arch.input_size;
    let h = arch.hidden_size;
    let d = arch.dense_size;
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let steps = batch[0].borrow().steps;
    if steps == 0 {
        return Err(Error::invalid("windows must have at least one step"));
    }
    for w in batch {
        let w = w.borrow();
        if w.steps != steps || w.features != f || w.values.len() != steps * f {
            return Err(Error::ShapeMismatch {
                context: "model_forward",
                expected: format!("{steps}x{f}"),
                actual: format!("{}x{}", w.steps, w.features),
            });
        }
    }
    let b = batch.len();

    let mut samples = Vec::with_capacity(b);
    let mut bn_input = vec![0.0; b * h];
    for (s, w) in batch.iter().enumerate() {
        let w = w.borrow();
        let l1 = lstm_forward(&params.lstm1, &w.values, steps, f, h);
        check_finite(&l1.hidden, "lstm1")?;
        let l2 = lstm_forward(&params.lstm2, &l1.hidden[h..], steps, h, h);
        check_finite(&l2.hidden, "lstm2")?;
        bn_input[s * h..(s + 1) * h].copy_from_slice(&l2.hidden[steps * h..]);
        samples.push(SampleTrace {
            input: w.values.clone(),
            l1,
            l2,
        });
    }

    let (bn_mean, bn_var) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0; h];
            for row in bn_input.chunks_exact(h) {
                for (m, x) in mean.iter_mut().zip(row) {
                    *m += x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= b as f64);
            let mut var = vec![0.0; h];
            for row in bn_input.chunks_exact(h) {
                for j in 0..h {
                    let c = row[j] - mean[j];
                    var[j] += c * c;
                }
            }
            var.iter_mut().for_each(|v| *v /= b as f64);
            (mean, var)
        }
        Mode::Eval => (
            params.bn_running_mean.data().to_vec(),
            params.bn_running_var.data().to_vec(),
        ),
    };
    let mut bn_xhat = vec![0.0; b * h];
    let mut bn_out = vec![0.0; b * h];
    for s in 0..b {
        for j in 0..h {
            let xhat = (bn_input[s * h + j] - bn_mean[j]) / (bn_var[j] + arch.bn_eps).sqrt();
            bn_xhat[s * h + j] = xhat;
            bn_out[s * h + j] = params.bn_gamma.data()[j] * xhat + params.bn_beta.data()[j];
        }
    }
    check_finite(&bn_out, "batch_norm")?;

    let mut fc1_pre = vec![0.0; b * d];
    let mut fc1_act = vec![0.0; b * d];
    let mut logits = vec![0.0; b];
    let mut probs = vec![0.0; b];
    for s in 0..b {
        let pre = &mut fc1_pre[s * d..(s + 1) * d];
        pre.copy_from_slice(params.fc1_b.data());
        params.fc1_w.mul_vec_acc(&bn_out[s * h..(s + 1) * h], pre);
        let act = &mut fc1_act[s * d..(s + 1) * d];
        for (a, p) in act.iter_mut().zip(pre.iter()) {
            *a = p.max(0.0);
        }
        let mut logit = [params.fc2_b.data()[0]];
        params.fc2_w.mul_vec_acc(act, &mut logit);
        logits[s] = logit[0];
        probs[s] = sigmoid(logit[0]);
    }
    check_finite(&fc1_pre, "fc1")?;
    check_finite(&logits, "fc2")?;

    let cache = ForwardCache {
        mode,
        checksum: params.checksum(),
        steps,
        samples,
        bn_input,
        bn_mean,
        bn_var,
        bn_xhat,
        bn_out,
        fc1_pre,
        fc1_act,
        logits,
        probs: probs.clone(),
    };
    Ok((probs, cache))
}

/// Folds the batch statistics of a train-mode pass into the running
/// estimates (unbiased variance, as in the usual batch-norm convention).
pub fn update_running_stats(params: &mut ModelParams, cache: &ForwardCache) {
    if cache.mode != Mode::Train {
        return;
    }
    let m = params.arch.bn_momentum;
    let b = cache.batch_size() as f64;
    let correction = if b > 1.0 { b / (b - 1.0) } else { 1.0 };
    let h = params.arch.hidden_size;
    for j in 0..h {
        let rm = params.bn_running_mean.get(j, 0);
        params.bn_running_mean.set(j, 0, (1.0 - m) * rm + m * cache.bn_mean[j]);
        let rv = params.bn_running_var.get(j, 0);
        let batch_var = cache.bn_var[j] * correction;
        // keep the estimate strictly positive even for degenerate batches
        let updated = ((1.0 - m) * rv + m * batch_var).max(f64::MIN_POSITIVE);
        params.bn_running_var.set(j, 0, updated);
    }
}

struct LayerGrads<'a> {
    w_ih: &'a mut Matrix,
    w_hh: &'a mut Matrix,
    bias: &'a mut Matrix,
}

/// Backpropagation through time for one sample of one layer. `dh_ext` holds
/// the gradient arriving at every `h_t` from above (`T × H`); returns the
/// gradient with respect to the layer inputs (`T × in`).
fn lstm_backward(
    layer: &LstmLayer,
    grads: &mut LayerGrads<'_>,
    trace: &LayerTrace,
    input: &[f64],
    dh_ext: &[f64],
    steps: usize,
    in_dim: usize,
    h: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; steps * in_dim];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    for t in (0..steps).rev() {
        let g = &trace.gates[t * 4 * h..(t + 1) * 4 * h];
        let c_prev = &trace.cells[t * h..(t + 1) * h];
        let tc = &trace.tanh_cells[t * h..(t + 1) * h];
        for j in 0..h {
            let dh = dh_ext[t * h + j] + dh_next[j];
            let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let d_o = dh * tc[j];
            let dc = dc_next[j] + dh * o * (1.0 - tc[j] * tc[j]);
            dz[j] = dc * gg * i * (1.0 - i);
            dz[h + j] = dc * c_prev[j] * f * (1.0 - f);
            dz[2 * h + j] = dc * i * (1.0 - gg * gg);
            dz[3 * h + j] = d_o * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        let x_t = &input[t * in_dim..(t + 1) * in_dim];
        let h_prev = &trace.hidden[t * h..(t + 1) * h];
        grads.w_ih.add_outer(&dz, x_t);
        grads.w_hh.add_outer(&dz, h_prev);
        for (bg, z) in grads.bias.data_mut().iter_mut().zip(&dz) {
            *bg += z;
        }
        layer
            .w_ih
            .mul_vec_t_acc(&dz, &mut dx[t * in_dim..(t + 1) * in_dim]);
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        layer.w_hh.mul_vec_t_acc(&dz, &mut dh_next);
    }
    dx
}

/// Exact gradients of `Σ_s loss_grads[s] · prob[s]` with respect to every
/// trainable tensor. Running-statistic entries of the result are zero.
pub fn model_backward(
    cache: &ForwardCache,
    loss_grads: &[f64],
    params: &ModelParams,
) -> Result<ModelParams> {
    if cache.checksum != params.checksum() {
        return Err(Error::invalid(
            "forward cache does not belong to these parameters",
        ));
    }
    let b = cache.batch_size();
    if loss_grads.len() != b {
        return Err(Error::ShapeMismatch {
            context: "model_backward",
            expected: b.to_string(),
            actual: loss_grads.len().to_string(),
        });
    }
    let arch = params.arch;
    let (f, h, d) = (arch.input_size, arch.hidden_size, arch.dense_size);
    let steps = cache.steps;
    let mut grads = params.zeros_like();

    // dense head
    let mut d_bn_out = vec![0.0; b * h];
    for s in 0..b {
        let p = cache.probs[s];
        let dlogit = loss_grads[s] * p * (1.0 - p);
        if dlogit == 0.0 {
            continue;
        }
        let act = &cache.fc1_act[s * d..(s + 1) * d];
        grads.fc2_w.add_outer(&[dlogit], act);
        grads.fc2_b.data_mut()[0] += dlogit;
        let mut d_act = vec![0.0; d];
        params.fc2_w.mul_vec_t_acc(&[dlogit], &mut d_act);
        let pre = &cache.fc1_pre[s * d..(s + 1) * d];
        for (da, p) in d_act.iter_mut().zip(pre) {
            if *p <= 0.0 {
                *da = 0.0;
            }
        }
        grads.fc1_w.add_outer(&d_act, &cache.bn_out[s * h..(s + 1) * h]);
        for (bg, v) in grads.fc1_b.data_mut().iter_mut().zip(&d_act) {
            *bg += v;
        }
        params
            .fc1_w
            .mul_vec_t_acc(&d_act, &mut d_bn_out[s * h..(s + 1) * h]);
    }

    // batch norm
    let gamma = params.bn_gamma.data();
    let mut d_bn_in = vec![0.0; b * h];
    for j in 0..h {
        let inv_std = 1.0 / (cache.bn_var[j] + arch.bn_eps).sqrt();
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for s in 0..b {
            let dy = d_bn_out[s * h + j];
            let xhat = cache.bn_xhat[s * h + j];
            grads.bn_gamma.data_mut()[j] += dy * xhat;
            grads.bn_beta.data_mut()[j] += dy;
            sum_dxhat += dy * gamma[j];
            sum_dxhat_xhat += dy * gamma[j] * xhat;
        }
        for s in 0..b {
            let dxhat = d_bn_out[s * h + j] * gamma[j];
            d_bn_in[s * h + j] = match cache.mode {
                Mode::Train => {
                    let xhat = cache.bn_xhat[s * h + j];
                    inv_std * (dxhat - sum_dxhat / b as f64 - xhat * sum_dxhat_xhat / b as f64)
                }
                Mode::Eval => inv_std * dxhat,
            };
        }
    }

    // recurrent layers
    let mut dh2 = vec![0.0; steps * h];
    for (s, trace) in cache.samples.iter().enumerate() {
        dh2.iter_mut().for_each(|v| *v = 0.0);
        dh2[(steps - 1) * h..].copy_from_slice(&d_bn_in[s * h..(s + 1) * h]);
        let dh1 = {
            let mut g2 = LayerGrads {
                w_ih: &mut grads.lstm2.w_ih,
                w_hh: &mut grads.lstm2.w_hh,
                bias: &mut grads.lstm2.bias,
            };
            lstm_backward(
                &params.lstm2,
                &mut g2,
                &trace.l2,
                &trace.l1.hidden[h..],
                &dh2,
                steps,
                h,
                h,
            )
        };
        let mut g1 = LayerGrads {
            w_ih: &mut grads.lstm1.w_ih,
            w_hh: &mut grads.lstm1.w_hh,
            bias: &mut grads.lstm1.bias,
        };
        lstm_backward(&params.lstm1, &mut g1, &trace.l1, &trace.input, &dh1, steps, f, h);
    }

    for t in grads.tensors() {
        if !t.is_finite() {
            return Err(Error::NumericalFailure {
                layer: "backward".into(),
            });
        }
    }
    Ok(grads)
}
