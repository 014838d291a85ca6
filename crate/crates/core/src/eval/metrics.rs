use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn from_predictions(predictions: &[u8], labels: &[u8]) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                context: "confusion counts",
                expected: labels.len().to_string(),
                actual: predictions.len().to_string(),
            });
        }
        let mut c = Self::default();
        for (&p, &y) in predictions.iter().zip(labels) {
            c.record(p, y)?;
        }
        Ok(c)
    }

    pub fn record(&mut self, prediction: u8, label: u8) -> Result<()> {
        match (prediction, label) {
            (1, 1) => self.tp += 1,
            (0, 0) => self.tn += 1,
            (1, 0) => self.fp += 1,
            (0, 1) => self.fn_ += 1,
            _ => {
                return Err(Error::invalid(format!(
                    "prediction {prediction} / label {label} must be 0 or 1"
                )))
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            tn: self.tn + other.tn,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Metrics reported as 0 because their denominator was 0.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<String>,
}

/// Accuracy `(TP+TN)/N`, precision `TP/(TP+FP)`, recall `TP/(TP+FN)` and
/// `F1 = 2PR/(P+R)`. Zero denominators give 0 and are listed in
/// `degenerate`.
pub fn compute_metrics(c: &ConfusionCounts) -> Result<Metrics> {
    let total = c.total();
    if total == 0 {
        return Err(Error::invalid("no evaluated windows"));
    }
    let mut degenerate = Vec::new();
    let mut ratio = |num: u64, den: u64, name: &str| {
        if den == 0 {
            degenerate.push(name.to_string());
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let accuracy = ratio(c.tp + c.tn, total, "accuracy");
    let precision = ratio(c.tp, c.tp + c.fp, "precision");
    let recall = ratio(c.tp, c.tp + c.fn_, "recall");
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        degenerate.push("f1".to_string());
        0.0
    };
    Ok(Metrics {
        accuracy,
        precision,
        recall,
        f1,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRecall {
    /// `None` when the client has no positive test windows.
    pub recall: Option<f64>,
    pub positives: u64,
    pub counts: ConfusionCounts,
}

pub fn per_client_recall(counts: &BTreeMap<String, ConfusionCounts>) -> BTreeMap<String, ClientRecall> {
    counts
        .iter()
        .map(|(id, c)| {
            let recall = (c.positives() > 0).then(|| c.tp as f64 / c.positives() as f64);
            (
                id.clone(),
                ClientRecall {
                    recall,
                    positives: c.positives(),
                    counts: *c,
                },
            )
        })
        .collect()
}

/// `max − min` over the defined per-client recalls.
pub fn recall_spread(per_client: &BTreeMap<String, ClientRecall>) -> Option<f64> {
    let r: Vec<f64> = per_client.values().filter_map(|c| c.recall).collect();
    if r.is_empty() {
        return None;
    }
    let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = r.iter().copied().fold(f64::INFINITY, f64::min);
    Some(max - min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let c = ConfusionCounts {
            tp: 88,
            fn_: 12,
            fp: 0,
            tn: 0,
        };
        let m = compute_metrics(&c).unwrap();
        assert_eq!(m.recall, 0.88);
        assert_eq!(m.precision, 1.0);
        let all = compute_metrics(&ConfusionCounts { tp: 3, tn: 5, fp: 0, fn_: 0 }).unwrap();
        assert_eq!((all.accuracy, all.precision, all.recall, all.f1), (1.0, 1.0, 1.0, 1.0));
        assert!(compute_metrics(&ConfusionCounts::default()).is_err());
    }

    #[test]
    fn zero_denominators_flagged() {
        let m = compute_metrics(&ConfusionCounts { tp: 0, tn: 10, fp: 0, fn_: 0 }).unwrap();
        assert_eq!(m.degenerate, vec!["precision", "recall", "f1"]);
        assert_eq!(m.accuracy, 1.0);
    }

    #[test]
    fn per_client() {
        let mut counts = BTreeMap::new();
        counts.insert("A".to_string(), ConfusionCounts { tp: 4, tn: 2, fp: 0, fn_: 0 });
        counts.insert("B".to_string(), ConfusionCounts { tp: 0, tn: 9, fp: 1, fn_: 0 });
        counts.insert("C".to_string(), ConfusionCounts { tp: 1, tn: 9, fp: 1, fn_: 3 });
        let r = per_client_recall(&counts);
        assert_eq!(r["A"].recall, Some(1.0));
        assert_eq!(r["B"].recall, None);
        assert_eq!(recall_spread(&r), Some(0.75));
        assert!(ConfusionCounts::from_predictions(&[2], &[0]).is_err());
    }
}
