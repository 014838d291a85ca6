//! Histogram-based outlier score.

use serde::{Deserialize, Serialize};

use super::check_rows;
use crate::error::{Error, Result};

pub const DEFAULT_EPS_DENSITY: f64 = 1e-9;

/// Equal-width histogram of one feature, densities scaled so the fullest
/// bin has density 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub min: f64,
    pub max: f64,
    pub edges: Vec<f64>,
    pub densities: Vec<f64>,
}

impl Histogram {
    fn fit(values: &[f64], bins: usize) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(max > min) {
            return Self {
                min,
                max,
                edges: vec![min, max],
                densities: vec![1.0],
            };
        }
        let width = (max - min) / bins as f64;
        let mut edges: Vec<f64> = (0..bins).map(|k| min + k as f64 * width).collect();
        edges.push(max);
        let mut counts = vec![0usize; bins];
        let mut h = Self {
            min,
            max,
            edges,
            densities: vec![0.0; bins],
        };
        for &v in values {
            counts[h.bin_of(v).expect("fitted values are in range")] += 1;
        }
        let top = *counts.iter().max().expect("bins >= 1") as f64;
        h.densities = counts.iter().map(|&c| c as f64 / top).collect();
        h
    }

    /// Bin index of `v`, `None` outside the fitted range.
    pub fn bin_of(&self, v: f64) -> Option<usize> {
        if !(v >= self.min && v <= self.max) {
            return None;
        }
        let bins = self.densities.len();
        if bins == 1 {
            return Some(0);
        }
        // the last edge is closed
        let k = self.edges[1..bins].partition_point(|e| *e <= v);
        Some(k.min(bins - 1))
    }

    pub fn density(&self, v: f64) -> f64 {
        self.bin_of(v).map_or(0.0, |k| self.densities[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HbosThreshold {
    /// Flag when the score, min-max normalized over the training scores,
    /// exceeds this cutoff.
    Normalized(f64),
    /// Flag the top fraction of training scores; the cutoff is the raw score
    /// at that quantile.
    TopFraction(f64),
}

impl Default for HbosThreshold {
    fn default() -> Self {
        HbosThreshold::Normalized(0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HbosModel {
    pub bins: usize,
    pub eps_density: f64,
    pub histograms: Vec<Histogram>,
    pub threshold: HbosThreshold,
    /// Smallest and largest training score.
    pub score_range: (f64, f64),
    /// Raw-score cutoff implied by `threshold`.
    pub cutoff: f64,
}

/// `⌈√n⌉` bins.
pub fn default_bins(n: usize) -> usize {
    ((n as f64).sqrt().ceil() as usize).max(1)
}

pub fn hbos_fit<R: AsRef<[f64]>>(rows: &[R], bins: Option<usize>, threshold: HbosThreshold) -> Result<HbosModel> {
    let f = check_rows(rows)?;
    let bins = bins.unwrap_or_else(|| default_bins(rows.len()));
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    match threshold {
        HbosThreshold::Normalized(t) | HbosThreshold::TopFraction(t) if !(0.0..=1.0).contains(&t) => {
            return Err(Error::invalid(format!("threshold {t} outside [0, 1]")))
        }
        _ => {}
    }
    let histograms = (0..f)
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|r| r.as_ref()[j]).collect();
            Histogram::fit(&col, bins)
        })
        .collect();
    let mut model = HbosModel {
        bins,
        eps_density: DEFAULT_EPS_DENSITY,
        histograms,
        threshold,
        score_range: (0.0, 0.0),
        cutoff: 0.0,
    };
    let mut scores: Vec<f64> = rows.iter().map(|r| hbos_score(&model, r.as_ref())).collect();
    scores.sort_by(f64::total_cmp);
    let lo = scores[0];
    let hi = scores[scores.len() - 1];
    model.score_range = (lo, hi);
    model.cutoff = match threshold {
        HbosThreshold::Normalized(t) => lo + t * (hi - lo),
        HbosThreshold::TopFraction(q) => {
            let flagged = (q * scores.len() as f64).round() as usize;
            if flagged == 0 {
                hi
            } else if flagged >= scores.len() {
                f64::NEG_INFINITY
            } else {
                scores[scores.len() - flagged - 1]
            }
        }
    };
    Ok(model)
}

/// `Σ_j ln(1 / max(density_j(x_j), ε_d))`; values outside a feature's
/// fitted range take density `ε_d`.
pub fn hbos_score(model: &HbosModel, record: &[f64]) -> f64 {
    model
        .histograms
        .iter()
        .zip(record)
        .map(|(h, &v)| (1.0 / h.density(v).max(model.eps_density)).ln())
        .sum()
}

impl HbosModel {
    pub fn normalized_score(&self, record: &[f64]) -> f64 {
        let (lo, hi) = self.score_range;
        let s = hbos_score(self, record);
        if hi > lo {
            (s - lo) / (hi - lo)
        } else {
            0.0
        }
    }

    pub fn predict(&self, record: &[f64]) -> u8 {
        u8::from(hbos_score(self, record) > self.cutoff)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_data_has_flat_densities() {
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64]).collect();
        let m = hbos_fit(&rows, Some(10), HbosThreshold::default()).unwrap();
        assert!(m.histograms[0].densities.iter().all(|d| *d == 1.0));
        assert_eq!(m.histograms[0].edges.len(), 11);
    }

    #[test]
    fn single_point_and_constant_feature() {
        let m = hbos_fit(&[vec![2.0, 3.0]], None, HbosThreshold::default()).unwrap();
        assert_eq!(m.histograms[0].densities, vec![1.0]);
        assert_eq!(hbos_score(&m, &[2.0, 3.0]), 0.0);
        let far = hbos_score(&m, &[9.0, -9.0]);
        assert!((far - 2.0 * (1.0 / DEFAULT_EPS_DENSITY).ln()).abs() < 1e-12);
    }

    #[test]
    fn densest_bin_gives_minimal_score() {
        let rows: Vec<Vec<f64>> = [0.0, 0.1, 0.15, 0.2, 5.0, 9.0, 10.0]
            .iter()
            .map(|v| vec![*v, *v])
            .collect();
        let m = hbos_fit(&rows, Some(4), HbosThreshold::default()).unwrap();
        let min = rows.iter().map(|r| hbos_score(&m, r)).fold(f64::INFINITY, f64::min);
        assert_eq!(hbos_score(&m, &[0.1, 0.1]), min);
        assert_eq!(min, 0.0);
    }

    #[test]
    fn top_fraction_flags_expected_count() {
        let rows: Vec<Vec<f64>> = (0..200).map(|i| vec![((i * 37) % 101) as f64, (i % 13) as f64]).collect();
        let m = hbos_fit(&rows, None, HbosThreshold::TopFraction(0.05)).unwrap();
        let flagged = rows.iter().filter(|r| m.predict(r) == 1).count();
        assert!(flagged <= 10, "{flagged}");
        let m = hbos_fit(&rows, None, HbosThreshold::Normalized(0.5)).unwrap();
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&m.normalized_score(r))));
    }

    #[test]
    fn rejects_bad_input() {
        let empty: Vec<Vec<f64>> = vec![];
        assert!(hbos_fit(&empty, None, HbosThreshold::default()).is_err());
        assert!(hbos_fit(&[vec![1.0]], Some(0), HbosThreshold::default()).is_err());
        assert!(hbos_fit(&[vec![1.0], vec![1.0, 2.0]], None, HbosThreshold::default()).is_err());
    }
}
