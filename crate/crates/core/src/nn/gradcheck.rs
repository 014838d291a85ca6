//! Central finite-difference verification of [`model_backward`].

use std::borrow::Borrow;

use serde::Serialize;

use super::forward::{model_backward, model_forward, Mode};
use super::loss::{bce_loss, fedprox_penalty_params};
use super::model::{is_trainable, ModelParams, TENSOR_NAMES};
use crate::data::SequenceWindow;
use crate::error::Result;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Worst relative error per tensor, in manifest order (trainable only).
    pub per_tensor: Vec<(String, f64)>,
    pub coordinates_checked: usize,
}

impl GradCheckReport {
    pub fn tensor_error(&self, name: &str) -> Option<f64> {
        self.per_tensor
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, e)| *e)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn total_loss<W: Borrow<SequenceWindow>>(
    params: &ModelParams,
    batch: &[W],
    labels: &[u8],
    prox: Option<(&ModelParams, f64)>,
) -> Result<f64> {
    let (probs, _) = model_forward(params, batch, Mode::Train)?;
    let (bce, _) = bce_loss(&probs, labels)?;
    let penalty = match prox {
        Some((global, mu)) => mu * params.trainable_sq_distance(global),
        None => 0.0,
    };
    Ok(bce + penalty)
}

/// Compares analytic gradients of the BCE loss (train-mode batch norm)
/// against central differences with step `epsilon`.
pub fn gradient_check<W: Borrow<SequenceWindow>>(
    params: &ModelParams,
    batch: &[W],
    epsilon: f64,
) -> Result<GradCheckReport> {
    gradient_check_with_penalty(params, batch, epsilon, None)
}

/// Same as [`gradient_check`] with an optional proximal term against `global`.
pub fn gradient_check_with_penalty<W: Borrow<SequenceWindow>>(
    params: &ModelParams,
    batch: &[W],
    epsilon: f64,
    prox: Option<(&ModelParams, f64)>,
) -> Result<GradCheckReport> {
    let labels: Vec<u8> = batch.iter().map(|w| w.borrow().label).collect();
    let (probs, cache) = model_forward(params, batch, Mode::Train)?;
    let (_, dprobs) = bce_loss(&probs, &labels)?;
    let mut analytic = model_backward(&cache, &dprobs, params)?;
    if let Some((global, mu)) = prox {
        fedprox_penalty_params(params, global, mu, &mut analytic);
    }

    let mut probe = params.clone();
    let mut per_tensor = Vec::new();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (ti, name) in TENSOR_NAMES.iter().enumerate() {
        if !is_trainable(name) {
            continue;
        }
        let n = params.tensors()[ti].len();
        let mut tensor_worst = 0.0f64;
        for k in 0..n {
            let original = params.tensors()[ti].data()[k];
            probe.tensors_mut()[ti].data_mut()[k] = original + epsilon;
            let up = total_loss(&probe, batch, &labels, prox)?;
            probe.tensors_mut()[ti].data_mut()[k] = original - epsilon;
            let down = total_loss(&probe, batch, &labels, prox)?;
            probe.tensors_mut()[ti].data_mut()[k] = original;
            let numeric = (up - down) / (2.0 * epsilon);
            let err = relative_error(analytic.tensors()[ti].data()[k], numeric);
            tensor_worst = tensor_worst.max(err);
            checked += 1;
        }
        worst = worst.max(tensor_worst);
        per_tensor.push(((*name).to_string(), tensor_worst));
    }
    Ok(GradCheckReport {
        max_relative_error: worst,
        per_tensor,
        coordinates_checked: checked,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteCase {
    pub seed: u64,
    pub hidden_size: usize,
    pub report: GradCheckReport,
}

/// Finite-difference checks on `models` random small networks
/// (`H ∈ {4, 8}`, `T = 5`, `F = 3`, batch of 4 with both classes).
pub fn gradcheck_suite(models: usize, seed_value: u64) -> Result<Vec<SuiteCase>> {
    use rand::Rng;

    use super::model::{Architecture, InitScheme};
    use crate::data::Origin;

    let (steps, features, batch) = (5, 3, 4);
    (0..models)
        .map(|i| {
            let case_seed = crate::seed::derive_indexed(seed_value, "gradcheck-case", i as u64);
            let hidden_size = if i % 2 == 0 { 4 } else { 8 };
            let params = ModelParams::init(Architecture::new(features, hidden_size), InitScheme::Uniform, case_seed)?;
            let mut rng = crate::seed::rng(case_seed);
            let windows: Vec<SequenceWindow> = (0..batch)
                .map(|b| {
                    let values = (0..steps * features).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let origin = Origin {
                        individual: "G".into(),
                        sequence: "G01".into(),
                        start: b,
                        synthetic: false,
                    };
                    SequenceWindow::new(steps, features, values, (b % 2) as u8, origin)
                })
                .collect();
            Ok(SuiteCase {
                seed: case_seed,
                hidden_size,
                report: gradient_check(&params, &windows, 1e-4)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_is_accurate_and_covers_both_sizes() {
        let cases = gradcheck_suite(4, 3).unwrap();
        assert_eq!(cases.iter().filter(|c| c.hidden_size == 8).count(), 2);
        for c in cases {
            assert!(c.report.max_relative_error < 1e-4, "{:?}", c.report.per_tensor);
        }
    }
}
