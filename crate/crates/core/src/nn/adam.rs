use serde::{Deserialize, Serialize};

use super::model::{is_trainable, ModelParams, TENSOR_NAMES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn reset(&mut self) {
        *self = Self {
            m: self.m.zeros_like(),
            v: self.v.zeros_like(),
            step: 0,
            ..*self
        };
    }
}

/// One bias-corrected Adam update of every trainable tensor.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut ModelParams,
    grads: &ModelParams,
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::invalid("learning rate must be positive"));
    }
    for (name, g) in TENSOR_NAMES.iter().zip(grads.tensors()) {
        if !g.is_finite() {
            return Err(Error::NumericalFailure {
                layer: format!("gradient of {name}"),
            });
        }
    }
    if state.m.arch != params.arch || grads.arch != params.arch {
        return Err(Error::invalid("optimizer state does not match parameters"));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let moments = state.m.tensors_mut().into_iter().zip(state.v.tensors_mut());
    for (((name, p), g), (m, v)) in TENSOR_NAMES
        .iter()
        .zip(params.tensors_mut())
        .zip(grads.tensors())
        .zip(moments)
    {
        if !is_trainable(name) {
            continue;
        }
        for (((pv, gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::{Architecture, InitScheme};
    use approx::assert_relative_eq;

    fn small() -> ModelParams {
        ModelParams::init(Architecture::new(2, 2), InitScheme::Uniform, 3).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = small();
        let before = p.clone();
        let mut s = AdamState::new(&p);
        let g = p.zeros_like();
        adam_step(&mut s, &mut p, &g, 0.001).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // closed form: m̂ = g, v̂ = g², update = -lr·g/(|g|+eps)
        let mut p = small();
        let before = p.clone();
        let mut s = AdamState::new(&p);
        let mut g = p.zeros_like();
        g.fc2_b.data_mut()[0] = 1.0;
        adam_step(&mut s, &mut p, &g, 0.001).unwrap();
        let moved = p.fc2_b.data()[0] - before.fc2_b.data()[0];
        assert_relative_eq!(moved, -0.001 / (1.0 + 1e-8), max_relative = 1e-12);
        assert_relative_eq!(moved, -0.001, max_relative = 1e-7);
    }

    #[test]
    fn rejects_non_finite_gradient_and_bad_lr() {
        let mut p = small();
        let mut s = AdamState::new(&p);
        let mut g = p.zeros_like();
        assert!(adam_step(&mut s, &mut p, &g, 0.0).is_err());
        g.fc1_w.data_mut()[0] = f64::INFINITY;
        assert!(matches!(
            adam_step(&mut s, &mut p, &g, 0.001),
            Err(Error::NumericalFailure { .. })
        ));
    }

    #[test]
    fn running_stats_are_not_optimized() {
        let mut p = small();
        let mut s = AdamState::new(&p);
        let mut g = p.zeros_like();
        g.bn_running_mean.data_mut()[0] = 5.0;
        let before = p.bn_running_mean.clone();
        adam_step(&mut s, &mut p, &g, 0.1).unwrap();
        assert_eq!(p.bn_running_mean, before);
    }
}
