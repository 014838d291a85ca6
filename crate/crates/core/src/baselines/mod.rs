//! Point-wise unsupervised outlier detectors used as comparison baselines.
//!
//! Both models serialize to JSON. The HBOS schema is
//! `{bins, eps_density, histograms: [{min, max, edges, densities}], threshold, score_range}`;
//! the isolation forest schema is
//! `{n_estimators, subsample, max_features, height_limit, trees: [{features, nodes}]}`
//! where a node is `{"Leaf": {"size": n}}` or
//! `{"Split": {"feature": j, "value": v, "left": i, "right": k}}` with child
//! indices into the tree's node list.

pub mod hbos;
pub mod iforest;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub use hbos::{hbos_fit, hbos_score, HbosModel, HbosThreshold, Histogram};
pub use iforest::{average_path_length, iforest_fit, iforest_score, IForestConfig, IForestModel, MaxSamples};

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn check_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<usize> {
    let first = rows.first().ok_or_else(|| Error::invalid("no records to fit"))?;
    let f = first.as_ref().len();
    if f == 0 {
        return Err(Error::invalid("records have no features"));
    }
    for (i, r) in rows.iter().enumerate() {
        let r = r.as_ref();
        if r.len() != f {
            return Err(Error::ShapeMismatch {
                context: "baseline fit",
                expected: f.to_string(),
                actual: format!("{} (record {i})", r.len()),
            });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("record {i} contains non-finite values")));
        }
    }
    Ok(f)
}
