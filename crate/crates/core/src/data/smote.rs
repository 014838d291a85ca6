//! Synthetic minority oversampling over flattened windows.

use rand::Rng;

use super::types::SequenceWindow;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SmoteOutcome {
    pub windows: Vec<SequenceWindow>,
    pub synthesized: usize,
    /// Set when rebalancing was skipped (too few minority samples).
    pub skipped: Option<String>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` nearest other minority samples of `i` (ties by index).
fn nearest(minority: &[&SequenceWindow], i: usize, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = minority
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(j, w)| (sq_dist(&minority[i].values, &w.values), j))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.truncate(k);
    d.into_iter().map(|(_, j)| j).collect()
}

/// Appends synthetic fall windows until the fall fraction reaches
/// `target_fraction`. Each synthetic window is `x + u·(x_nn − x)` for a
/// random minority window `x`, one of its `k` nearest minority neighbours
/// `x_nn` and `u ~ U[0, 1]`. Original windows are returned unchanged and
/// first.
pub fn smote_oversample(
    windows: &[SequenceWindow],
    target_fraction: f64,
    k: usize,
    seed_value: u64,
) -> Result<SmoteOutcome> {
    if !(target_fraction > 0.0 && target_fraction < 1.0) {
        return Err(Error::invalid("SMOTE target fraction must lie in (0, 1)"));
    }
    if k == 0 {
        return Err(Error::invalid("SMOTE k must be positive"));
    }
    let minority: Vec<&SequenceWindow> = windows.iter().filter(|w| w.is_fall()).collect();
    let mut out = windows.to_vec();
    let mut n_min = minority.len();
    let mut total = windows.len();
    let reached = |n_min: usize, total: usize| total > 0 && n_min as f64 >= target_fraction * total as f64;
    if reached(n_min, total) {
        return Ok(SmoteOutcome {
            windows: out,
            synthesized: 0,
            skipped: None,
        });
    }
    if minority.len() < k + 1 {
        let reason = format!(
            "{} minority windows, need at least k+1 = {}",
            minority.len(),
            k + 1
        );
        log::warn!("SMOTE skipped: {reason}");
        return Ok(SmoteOutcome {
            windows: out,
            synthesized: 0,
            skipped: Some(reason),
        });
    }

    let neighbours: Vec<Vec<usize>> = (0..minority.len()).map(|i| nearest(&minority, i, k)).collect();
    let mut rng = seed::rng(seed::derive(seed_value, "smote"));
    let mut synthesized = 0;
    while !reached(n_min, total) {
        let i = rng.gen_range(0..minority.len());
        let j = neighbours[i][rng.gen_range(0..neighbours[i].len())];
        let u: f64 = rng.gen_range(0.0..=1.0);
        let base = minority[i];
        let values = base
            .values
            .iter()
            .zip(&minority[j].values)
            .map(|(x, n)| x + u * (n - x))
            .collect();
        let mut origin = base.origin.clone();
        origin.synthetic = true;
        out.push(SequenceWindow::new(base.steps, base.features, values, 1, origin));
        synthesized += 1;
        n_min += 1;
        total += 1;
    }
    Ok(SmoteOutcome {
        windows: out,
        synthesized,
        skipped: None,
    })
}
