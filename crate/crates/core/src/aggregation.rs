//! Server-side aggregation of client updates.
//!
//! [`fedavg`] is the sample-weighted mean. [`swa_aggregate`] composes epoch
//! normalization, a coordinate-wise trimmed mean and exponential fusion with
//! the incoming global parameters. Two readings of the normalization are
//! supported: [`SwaMode::Delta`] normalizes and fuses the change `w_i − w_g`,
//! [`SwaMode::Literal`] divides whole weight vectors by the epoch count and
//! mixes them convexly with the global model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::params::{ensure_same_len, ParameterVector};

/// Coordinates handled per parallel task in [`trimmed_mean`].
const CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwaMode {
    #[default]
    Delta,
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwaConfig {
    /// Trim fraction in `[0, 0.5)`.
    pub beta: f64,
    /// Fusion weight in `(0, 1]`.
    pub alpha: f64,
    pub mode: SwaMode,
    /// When false no values are trimmed (`m = 0`), which the trim-count rule
    /// itself never produces.
    pub trimming: bool,
}

impl Default for SwaConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            alpha: 0.1,
            mode: SwaMode::Delta,
            trimming: true,
        }
    }
}

impl SwaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.beta) {
            return Err(Error::Config(format!("beta must lie in [0, 0.5), got {}", self.beta)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        Ok(())
    }

    /// Values trimmed from each end for `n` updates.
    pub fn trim_for(&self, n: usize) -> Result<usize> {
        if self.trimming {
            trim_count(n, self.beta)
        } else if n == 0 {
            Err(Error::invalid("no updates to aggregate"))
        } else {
            Ok(0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientUpdate {
    pub client_id: String,
    pub params: ParameterVector,
    pub epochs_trained: usize,
    pub sample_count: usize,
}

/// Epoch-normalized contribution of one client.
pub fn fednova_normalize(update: &ClientUpdate, global: &ParameterVector, mode: SwaMode) -> Result<ParameterVector> {
    if update.epochs_trained == 0 {
        return Err(Error::invalid(format!(
            "client {} reports 0 local epochs",
            update.client_id
        )));
    }
    ensure_same_len("fednova_normalize", global, &update.params)?;
    let e = update.epochs_trained as f64;
    Ok(match mode {
        SwaMode::Delta => ParameterVector::new(
            update
                .params
                .values
                .iter()
                .zip(&global.values)
                .map(|(w, g)| (w - g) / e)
                .collect(),
        ),
        SwaMode::Literal => ParameterVector::new(update.params.values.iter().map(|w| w / e).collect()),
    })
}

/// `m = ⌊β·n⌋`, or 1 when that is 0. Fails when fewer than one value would
/// survive trimming.
pub fn trim_count(n: usize, beta: f64) -> Result<usize> {
    if n == 0 {
        return Err(Error::invalid("no updates to aggregate"));
    }
    if !(0.0..0.5).contains(&beta) {
        return Err(Error::Config(format!("beta must lie in [0, 0.5), got {beta}")));
    }
    let m = ((beta * n as f64).floor() as usize).max(1);
    if n < 2 * m + 1 {
        return Err(Error::AggregationInfeasible { n, beta, m });
    }
    Ok(m)
}

fn check_updates(updates: &[ParameterVector]) -> Result<usize> {
    let first = updates.first().ok_or_else(|| Error::invalid("no updates to aggregate"))?;
    for u in &updates[1..] {
        ensure_same_len("aggregation", first, u)?;
    }
    if let Some(i) = updates.iter().position(|u| !u.is_finite()) {
        return Err(Error::invalid(format!("update {i} contains non-finite values")));
    }
    Ok(first.len())
}

/// Coordinate-wise trimmed mean with `m` values dropped from each end.
/// Each coordinate's values are sorted ascending (stable, so equal values
/// keep client order), the middle `n − 2m` are summed in order and divided
/// by their count. When the retained values are all equal that value is
/// returned as is.
pub fn trimmed_mean_m(updates: &[ParameterVector], m: usize, exec: Execution) -> Result<ParameterVector> {
    let d = check_updates(updates)?;
    let n = updates.len();
    if n < 2 * m + 1 {
        return Err(Error::invalid(format!("cannot trim {m} from each end of {n} values")));
    }
    let kept = (n - 2 * m) as f64;
    let chunks = exec::map_range(exec, d.div_ceil(CHUNK), |c| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(d);
        let mut col = vec![0.0; n];
        let mut out = Vec::with_capacity(hi - lo);
        for j in lo..hi {
            for (slot, u) in col.iter_mut().zip(updates) {
                *slot = u.values[j];
            }
            col.sort_by(f64::total_cmp);
            let mid = &col[m..n - m];
            if mid[0] == mid[mid.len() - 1] {
                // all retained values equal: return it exactly
                out.push(mid[0]);
                continue;
            }
            let mut s = 0.0;
            for v in mid {
                s += v;
            }
            out.push(s / kept);
        }
        out
    });
    Ok(ParameterVector::new(chunks.concat()))
}

/// Coordinate-wise trimmed mean with `m` from [`trim_count`].
pub fn trimmed_mean(updates: &[ParameterVector], beta: f64, exec: Execution) -> Result<ParameterVector> {
    let m = trim_count(updates.len(), beta)?;
    trimmed_mean_m(updates, m, exec)
}

pub fn ema_fuse(global: &ParameterVector, aggregated: &ParameterVector, alpha: f64, mode: SwaMode) -> Result<ParameterVector> {
    ensure_same_len("ema_fuse", global, aggregated)?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let pairs = global.values.iter().zip(&aggregated.values);
    Ok(ParameterVector::new(match mode {
        SwaMode::Literal => pairs.map(|(g, a)| (1.0 - alpha) * g + alpha * a).collect(),
        SwaMode::Delta => pairs.map(|(g, a)| g + alpha * a).collect(),
    }))
}

pub fn swa_aggregate(
    global: &ParameterVector,
    updates: &[ClientUpdate],
    config: &SwaConfig,
    exec: Execution,
) -> Result<ParameterVector> {
    config.validate()?;
    let m = config.trim_for(updates.len())?;
    let normalized = updates
        .iter()
        .map(|u| fednova_normalize(u, global, config.mode))
        .collect::<Result<Vec<_>>>()?;
    let trimmed = trimmed_mean_m(&normalized, m, exec)?;
    ema_fuse(global, &trimmed, config.alpha, config.mode)
}

/// Sample-count weighted mean `Σ nᵢ·wᵢ / Σ nᵢ`.
pub fn fedavg(updates: &[ClientUpdate]) -> Result<ParameterVector> {
    let vectors: Vec<ParameterVector> = updates.iter().map(|u| u.params.clone()).collect();
    let d = check_updates(&vectors)?;
    let total: usize = updates.iter().map(|u| u.sample_count).sum();
    if total == 0 {
        return Err(Error::invalid("fedavg over zero total samples"));
    }
    let mut out = vec![0.0; d];
    for u in updates {
        let w = u.sample_count as f64;
        for (o, v) in out.iter_mut().zip(&u.params.values) {
            *o += w * v;
        }
    }
    let total = total as f64;
    for o in &mut out {
        *o /= total;
    }
    Ok(ParameterVector::new(out))
}
