use rand::seq::index;

use super::ldpa::{BodyLocation, RawRecord};
use super::types::MergedRecord;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSequence {
    pub sequence: String,
    pub individual: String,
    pub ankle: BodyLocation,
    pub records: Vec<MergedRecord>,
}

/// Sorted random subset of `0..len` of size `keep`; identity when `keep >= len`.
pub fn order_preserving_subsample(len: usize, keep: usize, rng: &mut seed::SimRng) -> Vec<usize> {
    if keep >= len {
        return (0..len).collect();
    }
    let mut picked = index::sample(rng, len, keep).into_vec();
    picked.sort_unstable();
    picked
}

/// Aligns the ankle, chest and belt streams of one sequence into 9-feature
/// records.
///
/// The ankle stream with more readings is used (ties go to the
/// lexicographically smaller sensor id). Longer streams are randomly
/// subsampled down to the shortest length, keeping temporal order, then the
/// streams are zipped positionally. A merged record is labeled 1 if any of
/// its three readings is "falling". Returns `None` (with a warning) when a
/// required stream is missing.
pub fn align_and_merge(sequence: &str, records: &[RawRecord], seed_value: u64) -> Option<AlignedSequence> {
    let stream = |loc: BodyLocation| -> Vec<&RawRecord> {
        records.iter().filter(|r| r.location() == loc).collect()
    };
    let left = stream(BodyLocation::LeftAnkle);
    let right = stream(BodyLocation::RightAnkle);
    // left ankle id "010-000-024-033" sorts before right "010-000-030-096"
    let (ankle_loc, ankle) = if right.len() > left.len() {
        (BodyLocation::RightAnkle, right)
    } else {
        (BodyLocation::LeftAnkle, left)
    };
    let chest = stream(BodyLocation::Chest);
    let belt = stream(BodyLocation::Belt);
    for (name, s) in [("ankle", &ankle), ("chest", &chest), ("belt", &belt)] {
        if s.is_empty() {
            log::warn!("sequence {sequence}: no {name} readings, skipped");
            return None;
        }
    }
    let common = ankle.len().min(chest.len()).min(belt.len());
    let mut rng = seed::rng(seed::derive(seed_value, sequence));
    let picks: Vec<Vec<usize>> = [&ankle, &chest, &belt]
        .iter()
        .map(|s| order_preserving_subsample(s.len(), common, &mut rng))
        .collect();

    let merged = (0..common)
        .map(|k| {
            let a = ankle[picks[0][k]];
            let c = chest[picks[1][k]];
            let b = belt[picks[2][k]];
            MergedRecord {
                features: [a.x, a.y, a.z, c.x, c.y, c.z, b.x, b.y, b.z],
                label: u8::from(a.is_falling() || c.is_falling() || b.is_falling()),
            }
        })
        .collect();
    Some(AlignedSequence {
        sequence: sequence.to_string(),
        individual: super::ldpa::individual_of(sequence).to_string(),
        ankle: ankle_loc,
        records: merged,
    })
}
