//! End-to-end preparation: raw rows → aligned sequences → windows → split.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::align::{align_and_merge, AlignedSequence};
use super::ldpa::{group_by_sequence, RawRecord};
use super::split::{sequence_number, split_train_test, DatasetSplit, SequenceData, TestSelection};
use super::types::MergedRecord;
use super::window::window_segments;
use crate::error::Result;
use crate::exec::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrepareConfig {
    pub window: usize,
    pub stride: usize,
    pub seed: u64,
    pub test_selection: TestSelection,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self {
            window: 20,
            stride: 1,
            seed: 0,
            test_selection: TestSelection::Last,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub split: DatasetSplit,
    pub aligned: Vec<AlignedSequence>,
    pub skipped_sequences: Vec<String>,
    /// Share of raw rows labeled "falling".
    pub raw_fall_prevalence: f64,
}

pub fn align_all(records: Vec<RawRecord>, seed_value: u64, exec: Execution) -> (Vec<AlignedSequence>, Vec<String>) {
    let groups = group_by_sequence(records);
    let aligned = exec::map_slice(exec, &groups, |(name, recs)| align_and_merge(name, recs, seed_value));
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    for ((name, _), a) in groups.iter().zip(aligned) {
        match a {
            Some(a) => kept.push(a),
            None => skipped.push(name.clone()),
        }
    }
    (kept, skipped)
}

pub fn window_and_split(aligned: &[AlignedSequence], cfg: &PrepareConfig, exec: Execution) -> Result<DatasetSplit> {
    let seqs = exec::map_slice(exec, aligned, |a| SequenceData {
        individual: a.individual.clone(),
        sequence: a.sequence.clone(),
        windows: window_segments(&a.records, cfg.window, cfg.stride, &a.individual, &a.sequence),
    });
    split_train_test(seqs, cfg.test_selection)
}

pub fn prepare_from_records(records: Vec<RawRecord>, cfg: &PrepareConfig, exec: Execution) -> Result<PreparedDataset> {
    let falls = records.iter().filter(|r| r.is_falling()).count();
    let raw_fall_prevalence = falls as f64 / records.len().max(1) as f64;
    let (aligned, skipped_sequences) = align_all(records, cfg.seed, exec);
    let split = window_and_split(&aligned, cfg, exec)?;
    Ok(PreparedDataset {
        split,
        aligned,
        skipped_sequences,
        raw_fall_prevalence,
    })
}

/// Point-wise train/test records using the same held-out sequence rule as
/// [`split_train_test`].
pub fn split_records(aligned: &[AlignedSequence], selection: TestSelection) -> (Vec<MergedRecord>, Vec<MergedRecord>) {
    let mut by_individual: BTreeMap<&str, Vec<&AlignedSequence>> = BTreeMap::new();
    for a in aligned {
        by_individual.entry(&a.individual).or_default().push(a);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for seqs in by_individual.values_mut() {
        seqs.sort_by_key(|s| (sequence_number(&s.sequence).unwrap_or(0), s.sequence.clone()));
        let held = match selection {
            TestSelection::Last => seqs.len().checked_sub(1),
            TestSelection::Number(n) => seqs.iter().position(|s| sequence_number(&s.sequence) == Some(n)),
        };
        for (i, s) in seqs.iter().enumerate() {
            if Some(i) == held {
                test.extend_from_slice(&s.records);
            } else {
                train.extend_from_slice(&s.records);
            }
        }
    }
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate_sequences, to_raw_records, SyntheticSpec};

    #[test]
    fn raw_rows_round_trip_through_alignment() {
        let spec = SyntheticSpec {
            individuals: 2,
            sequences_per_individual: 2,
            records_per_sequence: 120,
            ..Default::default()
        };
        let seqs = generate_sequences(&spec);
        let rows: Vec<_> = seqs.iter().flat_map(to_raw_records).collect();
        let cfg = PrepareConfig::default();
        let prepared = prepare_from_records(rows, &cfg, Execution::Sequential).unwrap();
        assert!(prepared.skipped_sequences.is_empty());
        assert_eq!(prepared.aligned, seqs);
        assert_eq!(prepared.split.num_train() + prepared.split.num_test(), 4 * 101);
        let par = prepare_from_records(
            seqs.iter().flat_map(to_raw_records).collect(),
            &cfg,
            Execution::Parallel,
        )
        .unwrap();
        assert_eq!(par.split, prepared.split);
        let (tr, te) = split_records(&prepared.aligned, TestSelection::Last);
        assert_eq!((tr.len(), te.len()), (240, 240));
    }
}
