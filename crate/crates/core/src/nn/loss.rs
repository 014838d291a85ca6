use crate::error::{Error, Result};
use crate::params::{ensure_same_len, ParameterVector};

use super::model::{is_trainable, ModelParams, TENSOR_NAMES};

/// Clamp applied to probabilities before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy and its gradient with respect to each
/// probability.
///
/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`; the gradient
/// is evaluated at the clamped value so saturated predictions still get a
/// signal.
pub fn bce_loss(probabilities: &[f64], labels: &[u8]) -> Result<(f64, Vec<f64>)> {
    if probabilities.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            context: "bce_loss",
            expected: probabilities.len().to_string(),
            actual: labels.len().to_string(),
        });
    }
    if probabilities.is_empty() {
        return Err(Error::invalid("bce_loss on an empty batch"));
    }
    if let Some(bad) = labels.iter().find(|y| **y > 1) {
        return Err(Error::invalid(format!("label {bad} is not 0 or 1")));
    }
    let n = probabilities.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(probabilities.len());
    for (p, y) in probabilities.iter().zip(labels) {
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        if *y == 1 {
            loss -= pc.ln();
            grads.push(-1.0 / (pc * n));
        } else {
            loss -= (1.0 - pc).ln();
            grads.push(1.0 / ((1.0 - pc) * n));
        }
    }
    Ok((loss / n, grads))
}

/// Proximal penalty `mu · Σ (w - w_g)²` and its gradient `2mu(w - w_g)`.
pub fn fedprox_penalty(
    local: &ParameterVector,
    global: &ParameterVector,
    mu: f64,
) -> Result<(f64, Vec<f64>)> {
    ensure_same_len("fedprox_penalty", local, global)?;
    if !(mu >= 0.0) {
        return Err(Error::invalid("mu must be non-negative"));
    }
    let mut penalty = 0.0;
    let grad = local
        .values
        .iter()
        .zip(&global.values)
        .map(|(w, g)| {
            let diff = w - g;
            penalty += diff * diff;
            2.0 * mu * diff
        })
        .collect();
    Ok((mu * penalty, grad))
}

/// [`fedprox_penalty`] over the trainable tensors of a model, accumulating
/// the gradient into `grads`.
pub fn fedprox_penalty_params(
    local: &ModelParams,
    global: &ModelParams,
    mu: f64,
    grads: &mut ModelParams,
) -> f64 {
    if mu == 0.0 {
        return 0.0;
    }
    let mut penalty = 0.0;
    for ((name, (w, g)), acc) in TENSOR_NAMES
        .iter()
        .zip(local.tensors().into_iter().zip(global.tensors()))
        .zip(grads.tensors_mut())
    {
        if !is_trainable(name) {
            continue;
        }
        for ((wv, gv), a) in w.data().iter().zip(g.data()).zip(acc.data_mut()) {
            let diff = wv - gv;
            penalty += diff * diff;
            *a += 2.0 * mu * diff;
        }
    }
    mu * penalty
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bce_half_probability() {
        let (loss, _) = bce_loss(&[0.5], &[1]).unwrap();
        assert_relative_eq!(loss, std::f64::consts::LN_2, epsilon = 1e-15);
        assert_relative_eq!(loss, 0.6931, epsilon = 1e-4);
    }

    #[test]
    fn bce_perfect_prediction_is_clamped() {
        let (loss, _) = bce_loss(&[1.0, 0.0], &[1, 0]).unwrap();
        assert!(loss <= -(1.0 - 1e-7f64).ln() + 1e-18);
        assert!(loss.is_finite());
        let (wrong, _) = bce_loss(&[0.0], &[1]).unwrap();
        assert!(wrong.is_finite());
    }

    #[test]
    fn bce_two_sample_batch() {
        // scalar oracle: each term is -ln 0.9
        let term = -(0.9f64).ln();
        let expected = (term + term) / 2.0;
        let (loss, grads) = bce_loss(&[0.9, 0.1], &[1, 0]).unwrap();
        assert_relative_eq!(loss, expected, epsilon = 1e-15);
        assert_relative_eq!(grads[0], -1.0 / (0.9 * 2.0), epsilon = 1e-15);
        assert_relative_eq!(grads[1], 1.0 / (0.9 * 2.0), epsilon = 1e-15);
    }

    #[test]
    fn bce_gradient_matches_finite_difference() {
        let labels = [1u8, 0, 1];
        let probs = [0.3, 0.6, 0.85];
        let (_, g) = bce_loss(&probs, &labels).unwrap();
        for i in 0..3 {
            let mut up = probs;
            let mut dn = probs;
            up[i] += 1e-6;
            dn[i] -= 1e-6;
            let fd = (bce_loss(&up, &labels).unwrap().0 - bce_loss(&dn, &labels).unwrap().0) / 2e-6;
            assert_relative_eq!(g[i], fd, max_relative = 1e-7);
        }
    }

    #[test]
    fn bce_rejects_bad_labels() {
        assert!(matches!(bce_loss(&[0.5], &[2]), Err(Error::InvalidInput(_))));
        assert!(bce_loss(&[0.5, 0.5], &[1]).is_err());
    }

    #[test]
    fn penalty_examples() {
        let w = ParameterVector::new(vec![1.0, 2.0]);
        let (p, g) = fedprox_penalty(&w, &w, 0.01).unwrap();
        assert_eq!(p, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));

        let g0 = ParameterVector::new(vec![0.0, 1.0]);
        let (p, g) = fedprox_penalty(&w, &g0, 0.01).unwrap();
        assert_relative_eq!(p, 0.02, epsilon = 1e-15);
        assert_eq!(g, vec![0.02, 0.02]);

        assert!(fedprox_penalty(&w, &ParameterVector::zeros(3), 0.01).is_err());
    }

    #[test]
    fn penalty_is_symmetric_about_global() {
        let w = ParameterVector::new(vec![0.3, -1.7, 4.0]);
        let g = ParameterVector::new(vec![1.0, 0.5, -2.0]);
        let mirrored = ParameterVector::new(
            w.values.iter().zip(&g.values).map(|(w, g)| 2.0 * g - w).collect(),
        );
        let (a, _) = fedprox_penalty(&w, &g, 0.01).unwrap();
        let (b, _) = fedprox_penalty(&mirrored, &g, 0.01).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-14);
    }
}
