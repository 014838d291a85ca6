use serde::{Deserialize, Serialize};

/// Where a window came from. Synthetic (oversampled) windows carry the
/// origin of the minority sample they were interpolated from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Origin {
    pub individual: String,
    pub sequence: String,
    pub start: usize,
    pub synthetic: bool,
}

/// A fixed-length `steps × features` motion segment, row-major by time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceWindow {
    pub steps: usize,
    pub features: usize,
    pub values: Vec<f64>,
    pub label: u8,
    pub origin: Origin,
}

impl SequenceWindow {
    pub fn new(steps: usize, features: usize, values: Vec<f64>, label: u8, origin: Origin) -> Self {
        debug_assert_eq!(values.len(), steps * features);
        Self {
            steps,
            features,
            values,
            label,
            origin,
        }
    }

    #[inline]
    pub fn step(&self, t: usize) -> &[f64] {
        &self.values[t * self.features..(t + 1) * self.features]
    }

    pub fn is_fall(&self) -> bool {
        self.label == 1
    }
}

/// One aligned multi-sensor record: ankle, chest and belt coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedRecord {
    pub features: [f64; 9],
    pub label: u8,
}

pub const MERGED_FEATURE_NAMES: [&str; 9] = [
    "ANKLE_x", "ANKLE_y", "ANKLE_z", "CHEST_x", "CHEST_y", "CHEST_z", "BELT_x", "BELT_y", "BELT_z",
];
