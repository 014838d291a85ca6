//! Parameters of the two-layer LSTM fall classifier.
//!
//! Layout: `LSTM(F→H) → LSTM(H→H) → BatchNorm(h_T) → Dense(H→D) → ReLU →
//! Dense(D→1) → sigmoid`. Gate rows in every LSTM tensor are stacked in the
//! order input, forget, cell, output.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::params::{Manifest, ParameterVector, TensorEntry};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_size: usize,
    pub hidden_size: usize,
    /// Width of the first dense layer.
    pub dense_size: usize,
    pub bn_eps: f64,
    /// Weight of the newest batch statistic in the running estimates.
    pub bn_momentum: f64,
}

impl Architecture {
    pub fn new(input_size: usize, hidden_size: usize) -> Self {
        Self {
            input_size,
            hidden_size,
            dense_size: hidden_size,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.hidden_size == 0 || self.dense_size == 0 {
            return Err(Error::invalid("architecture sizes must be positive"));
        }
        if !(self.bn_eps > 0.0) {
            return Err(Error::invalid("bn_eps must be positive"));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::invalid("bn_momentum must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// LSTM and dense weights uniform in ±1/√fan, forget-gate bias 1.
    #[default]
    Uniform,
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    /// `4H × in`
    pub w_ih: Matrix,
    /// `4H × H`
    pub w_hh: Matrix,
    /// `4H × 1`
    pub bias: Matrix,
}

impl LstmLayer {
    fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Matrix::zeros(4 * hidden, input),
            w_hh: Matrix::zeros(4 * hidden, hidden),
            bias: Matrix::zeros(4 * hidden, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: Architecture,
    pub lstm1: LstmLayer,
    pub lstm2: LstmLayer,
    pub bn_gamma: Matrix,
    pub bn_beta: Matrix,
    pub bn_running_mean: Matrix,
    pub bn_running_var: Matrix,
    /// `D × H`
    pub fc1_w: Matrix,
    pub fc1_b: Matrix,
    /// `1 × D`
    pub fc2_w: Matrix,
    pub fc2_b: Matrix,
}

/// Names of the packed tensors, in manifest order.
pub const TENSOR_NAMES: [&str; 14] = [
    "lstm1.w_ih",
    "lstm1.w_hh",
    "lstm1.bias",
    "lstm2.w_ih",
    "lstm2.w_hh",
    "lstm2.bias",
    "bn.gamma",
    "bn.beta",
    "bn.running_mean",
    "bn.running_var",
    "fc1.w",
    "fc1.b",
    "fc2.w",
    "fc2.b",
];

/// Running statistics are packed and aggregated but never receive gradients.
pub fn is_trainable(name: &str) -> bool {
    !name.starts_with("bn.running_")
}

impl ModelParams {
    /// Zero weights with unit running variance (the only non-zero buffer).
    pub fn zeros(arch: Architecture) -> Self {
        let h = arch.hidden_size;
        let d = arch.dense_size;
        Self {
            arch,
            lstm1: LstmLayer::zeros(arch.input_size, h),
            lstm2: LstmLayer::zeros(h, h),
            bn_gamma: Matrix::zeros(h, 1),
            bn_beta: Matrix::zeros(h, 1),
            bn_running_mean: Matrix::zeros(h, 1),
            bn_running_var: Matrix::filled(h, 1, 1.0),
            fc1_w: Matrix::zeros(d, h),
            fc1_b: Matrix::zeros(d, 1),
            fc2_w: Matrix::zeros(1, d),
            fc2_b: Matrix::zeros(1, 1),
        }
    }

    /// Same shapes as `self`, every value zero. Used for gradients and
    /// optimizer moments.
    pub fn zeros_like(&self) -> Self {
        let mut out = Self::zeros(self.arch);
        out.bn_running_var = Matrix::zeros(self.arch.hidden_size, 1);
        out
    }

    pub fn init(arch: Architecture, scheme: InitScheme, seed_value: u64) -> Result<Self> {
        arch.validate()?;
        let mut p = Self::zeros(arch);
        if scheme == InitScheme::Zeros {
            return Ok(p);
        }
        let mut rng = seed::rng(seed::derive(seed_value, "model-init"));
        let h = arch.hidden_size;
        let bound = 1.0 / (h as f64).sqrt();
        for layer in [&mut p.lstm1, &mut p.lstm2] {
            for m in [&mut layer.w_ih, &mut layer.w_hh] {
                for v in m.data_mut() {
                    *v = rng.gen_range(-bound..=bound);
                }
            }
            for r in h..2 * h {
                layer.bias.set(r, 0, 1.0);
            }
        }
        p.bn_gamma = Matrix::filled(h, 1, 1.0);
        let fc1_bound = 1.0 / (h as f64).sqrt();
        for v in p.fc1_w.data_mut() {
            *v = rng.gen_range(-fc1_bound..=fc1_bound);
        }
        let fc2_bound = 1.0 / (arch.dense_size as f64).sqrt();
        for v in p.fc2_w.data_mut() {
            *v = rng.gen_range(-fc2_bound..=fc2_bound);
        }
        Ok(p)
    }

    pub fn tensors(&self) -> [&Matrix; 14] {
        [
            &self.lstm1.w_ih,
            &self.lstm1.w_hh,
            &self.lstm1.bias,
            &self.lstm2.w_ih,
            &self.lstm2.w_hh,
            &self.lstm2.bias,
            &self.bn_gamma,
            &self.bn_beta,
            &self.bn_running_mean,
            &self.bn_running_var,
            &self.fc1_w,
            &self.fc1_b,
            &self.fc2_w,
            &self.fc2_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 14] {
        [
            &mut self.lstm1.w_ih,
            &mut self.lstm1.w_hh,
            &mut self.lstm1.bias,
            &mut self.lstm2.w_ih,
            &mut self.lstm2.w_hh,
            &mut self.lstm2.bias,
            &mut self.bn_gamma,
            &mut self.bn_beta,
            &mut self.bn_running_mean,
            &mut self.bn_running_var,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
        ]
    }

    pub fn manifest(&self) -> Manifest {
        manifest_for(&self.arch)
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn to_vector(&self) -> ParameterVector {
        let mut out = Vec::with_capacity(self.num_values());
        for t in self.tensors() {
            out.extend_from_slice(t.data());
        }
        ParameterVector::new(out)
    }

    /// Flat vector plus manifest, ready to save.
    pub fn to_parameter_file(&self) -> Result<crate::params::ParameterFile> {
        crate::params::ParameterFile::new(shared_manifest(&self.arch), self.to_vector())
    }

    pub fn from_vector(arch: Architecture, v: &ParameterVector) -> Result<Self> {
        let mut p = Self::zeros(arch);
        p.load_vector(v)?;
        Ok(p)
    }

    /// Overwrites every tensor from a packed vector.
    pub fn load_vector(&mut self, v: &ParameterVector) -> Result<()> {
        let expected = self.num_values();
        if v.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "ModelParams::load_vector",
                expected: expected.to_string(),
                actual: v.len().to_string(),
            });
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&v.values[offset..offset + n]);
            offset += n;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, t) in TENSOR_NAMES.iter().zip(self.tensors()) {
            if !t.is_finite() {
                return Err(Error::NumericalFailure {
                    layer: (*name).to_string(),
                });
            }
        }
        if self.bn_running_var.data().iter().any(|v| *v <= 0.0) {
            return Err(Error::invalid("bn.running_var must be strictly positive"));
        }
        Ok(())
    }

    /// Squared L2 distance over trainable tensors.
    pub fn trainable_sq_distance(&self, other: &ModelParams) -> f64 {
        TENSOR_NAMES
            .iter()
            .zip(self.tensors().iter().zip(other.tensors()))
            .filter(|(n, _)| is_trainable(n))
            .map(|(_, (a, b))| {
                a.data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
            })
            .sum()
    }

    /// Order-sensitive checksum of every value; used to detect stale caches.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors() {
            for v in t.data() {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0000_0100_0000_01b3).rotate_left(5);
            }
        }
        h
    }
}

pub fn manifest_for(arch: &Architecture) -> Manifest {
    let p = ModelParams::zeros(*arch);
    Manifest::new(
        TENSOR_NAMES
            .iter()
            .zip(p.tensors())
            .map(|(name, t)| TensorEntry {
                name: (*name).to_string(),
                shape: vec![t.rows(), t.cols()],
            })
            .collect(),
    )
}

pub fn shared_manifest(arch: &Architecture) -> Arc<Manifest> {
    Arc::new(manifest_for(arch))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vector_round_trip_and_manifest_agree() {
        let arch = Architecture::new(3, 4);
        let p = ModelParams::init(arch, InitScheme::Uniform, 42).unwrap();
        let v = p.to_vector();
        assert_eq!(v.len(), p.manifest().total_len());
        let back = ModelParams::from_vector(arch, &v).unwrap();
        assert_eq!(back, p);
        assert_eq!(p.manifest().span("lstm1.w_ih"), Some((0, 16 * 3)));
    }

    #[test]
    fn init_follows_gate_conventions() {
        let arch = Architecture::new(9, 8);
        let p = ModelParams::init(arch, InitScheme::Uniform, 1).unwrap();
        let b = 1.0 / 8f64.sqrt();
        for layer in [&p.lstm1, &p.lstm2] {
            assert!(layer.w_ih.data().iter().all(|v| v.abs() <= b));
            for r in 0..32 {
                let expected = if (8..16).contains(&r) { 1.0 } else { 0.0 };
                assert_eq!(layer.bias.get(r, 0), expected);
            }
        }
        assert_eq!(
            ModelParams::init(arch, InitScheme::Uniform, 1).unwrap(),
            p,
            "seeded init is deterministic"
        );
    }

    #[test]
    fn rejects_bad_vectors() {
        let arch = Architecture::new(3, 4);
        let p = ModelParams::zeros(arch);
        let mut v = p.to_vector();
        assert!(ModelParams::from_vector(arch, &ParameterVector::zeros(3)).is_err());
        let (off, _) = p.manifest().span("bn.running_var").unwrap();
        v.values[off] = 0.0;
        assert!(ModelParams::from_vector(arch, &v).is_err());
        v.values[off] = 1.0;
        v.values[0] = f64::NAN;
        assert!(matches!(
            ModelParams::from_vector(arch, &v),
            Err(Error::NumericalFailure { .. })
        ));
    }
}
