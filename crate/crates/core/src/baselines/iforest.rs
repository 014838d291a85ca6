//! Isolation forest.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::check_rows;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::seed;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxSamples {
    /// `min(256, n)`.
    #[default]
    Auto,
    Count(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IForestConfig {
    pub n_estimators: usize,
    pub max_samples: MaxSamples,
    /// Fraction of features each tree may split on.
    pub max_features: f64,
    pub seed: u64,
}

impl Default for IForestConfig {
    fn default() -> Self {
        Self {
            n_estimators: 300,
            max_samples: MaxSamples::Auto,
            max_features: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { size: usize },
    Split { feature: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationTree {
    /// Features this tree may split on.
    pub features: Vec<usize>,
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IForestModel {
    pub n_estimators: usize,
    pub subsample: usize,
    pub max_features: f64,
    pub height_limit: usize,
    pub trees: Vec<IsolationTree>,
}

/// Average path length of an unsuccessful search in a binary search tree of
/// `n` points: `2H(n−1) − 2(n−1)/n`, with `c(1) = 0`, `c(2) = 1`.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let m = (n - 1) as f64;
            2.0 * (m.ln() + EULER_GAMMA) - 2.0 * m / n as f64
        }
    }
}

struct Builder<'a, R> {
    rows: &'a [R],
    features: &'a [usize],
    limit: usize,
    nodes: Vec<Node>,
}

impl<R: AsRef<[f64]>> Builder<'_, R> {
    fn build(&mut self, idx: &mut [usize], depth: usize, rng: &mut seed::SimRng) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { size: idx.len() });
        if depth >= self.limit || idx.len() <= 1 {
            return id;
        }
        let ranges: Vec<(usize, f64, f64)> = self
            .features
            .iter()
            .filter_map(|&j| {
                let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    let v = self.rows[i].as_ref()[j];
                    (lo.min(v), hi.max(v))
                });
                (hi > lo).then_some((j, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return id;
        }
        let (feature, lo, hi) = ranges[rng.gen_range(0..ranges.len())];
        let mut value = rng.gen_range(lo..hi);
        if value <= lo {
            value = lo + (hi - lo) * 0.5;
        }
        // partition: < value goes left
        let mut k = 0;
        for p in 0..idx.len() {
            if self.rows[idx[p]].as_ref()[feature] < value {
                idx.swap(p, k);
                k += 1;
            }
        }
        let (l, r) = idx.split_at_mut(k);
        let left = self.build(l, depth + 1, rng);
        let right = self.build(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature,
            value,
            left,
            right,
        };
        id
    }
}

pub fn iforest_fit<R: AsRef<[f64]> + Sync>(rows: &[R], config: &IForestConfig, exec: Execution) -> Result<IForestModel> {
    let f = check_rows(rows)?;
    if rows.len() < 2 {
        return Err(Error::invalid("isolation forest needs at least 2 records"));
    }
    if config.n_estimators == 0 {
        return Err(Error::invalid("n_estimators must be at least 1"));
    }
    if !(config.max_features > 0.0 && config.max_features <= 1.0) {
        return Err(Error::invalid(format!("max_features {} outside (0, 1]", config.max_features)));
    }
    let subsample = match config.max_samples {
        MaxSamples::Auto => rows.len().min(256),
        MaxSamples::Count(c) if c >= 2 => c.min(rows.len()),
        MaxSamples::Count(c) => return Err(Error::invalid(format!("max_samples {c} < 2"))),
    };
    let n_feat = ((config.max_features * f as f64).round() as usize).clamp(1, f);
    let limit = (subsample as f64).log2().ceil() as usize;
    let trees = exec::map_range(exec, config.n_estimators, |t| {
        let mut rng = seed::rng(seed::derive_indexed(config.seed, "iforest-tree", t as u64));
        let mut features = index::sample(&mut rng, f, n_feat).into_vec();
        features.sort_unstable();
        let mut idx = index::sample(&mut rng, rows.len(), subsample).into_vec();
        let mut b = Builder {
            rows,
            features: &features,
            limit,
            nodes: Vec::new(),
        };
        b.build(&mut idx, 0, &mut rng);
        let nodes = b.nodes;
        IsolationTree { features, nodes }
    });
    Ok(IForestModel {
        n_estimators: config.n_estimators,
        subsample,
        max_features: config.max_features,
        height_limit: limit,
        trees,
    })
}

impl IsolationTree {
    pub fn path_length(&self, record: &[f64]) -> f64 {
        let mut id = 0;
        let mut depth = 0.0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { size } => return depth + average_path_length(*size),
                Node::Split {
                    feature,
                    value,
                    left,
                    right,
                } => {
                    id = if record[*feature] < *value { *left } else { *right };
                    depth += 1.0;
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], id: usize) -> usize {
            match &nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }
}

/// `2^(−E[h(x)] / c(ψ))` where `ψ` is the subsample size.
pub fn iforest_score(model: &IForestModel, record: &[f64]) -> f64 {
    let mean = model.trees.iter().map(|t| t.path_length(record)).sum::<f64>() / model.trees.len() as f64;
    2f64.powf(-mean / average_path_length(model.subsample))
}

impl IForestModel {
    /// Anomalous when the score exceeds 0.5.
    pub fn predict(&self, record: &[f64]) -> u8 {
        u8::from(iforest_score(self, record) > 0.5)
    }
}
