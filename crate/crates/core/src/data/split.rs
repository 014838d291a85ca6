use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::types::SequenceWindow;
use crate::error::{Error, Result};

/// Windows of one recorded activity sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceData {
    pub individual: String,
    pub sequence: String,
    pub windows: Vec<SequenceWindow>,
}

/// Which sequence of each individual is held out for testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestSelection {
    /// The highest-numbered sequence.
    #[default]
    Last,
    /// The sequence with this number (e.g. 3 selects "A03").
    Number(u32),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClientData {
    pub train: Vec<SequenceWindow>,
    pub test: Vec<SequenceWindow>,
    pub train_sequences: Vec<String>,
    pub test_sequences: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetSplit {
    pub steps: usize,
    pub features: usize,
    /// Keyed by individual id; each individual is one federated client.
    pub clients: BTreeMap<String, ClientData>,
}

impl DatasetSplit {
    pub fn train(&self) -> impl Iterator<Item = &SequenceWindow> {
        self.clients.values().flat_map(|c| c.train.iter())
    }

    pub fn test(&self) -> impl Iterator<Item = &SequenceWindow> {
        self.clients.values().flat_map(|c| c.test.iter())
    }

    pub fn client_ids(&self) -> Vec<String> {
        self.clients.keys().cloned().collect()
    }

    pub fn num_train(&self) -> usize {
        self.clients.values().map(|c| c.train.len()).sum()
    }

    pub fn num_test(&self) -> usize {
        self.clients.values().map(|c| c.test.len()).sum()
    }
}

pub fn sequence_number(sequence: &str) -> Option<u32> {
    let digits: String = sequence.chars().skip_while(|c| !c.is_ascii_digit()).collect();
    digits.parse().ok()
}

/// Holds out one whole sequence per individual as test data; the remaining
/// sequences form that individual's training set.
pub fn split_train_test(sequences: Vec<SequenceData>, selection: TestSelection) -> Result<DatasetSplit> {
    let mut by_individual: BTreeMap<String, Vec<SequenceData>> = BTreeMap::new();
    let mut shape: Option<(usize, usize)> = None;
    for s in sequences {
        if let Some(w) = s.windows.first() {
            match shape {
                None => shape = Some((w.steps, w.features)),
                Some(sh) if sh != (w.steps, w.features) => {
                    return Err(Error::invalid(format!(
                        "sequence {} has {}x{} windows, expected {}x{}",
                        s.sequence, w.steps, w.features, sh.0, sh.1
                    )))
                }
                _ => {}
            }
        }
        by_individual.entry(s.individual.clone()).or_default().push(s);
    }
    let mut clients = BTreeMap::new();
    for (individual, mut seqs) in by_individual {
        if seqs.len() < 2 {
            return Err(Error::invalid(format!(
                "individual {individual} has {} sequence(s); at least 2 are required",
                seqs.len()
            )));
        }
        seqs.sort_by_key(|s| (sequence_number(&s.sequence).unwrap_or(0), s.sequence.clone()));
        let test_idx = match selection {
            TestSelection::Last => seqs.len() - 1,
            TestSelection::Number(n) => seqs
                .iter()
                .position(|s| sequence_number(&s.sequence) == Some(n))
                .ok_or_else(|| {
                    Error::invalid(format!("individual {individual} has no sequence number {n}"))
                })?,
        };
        let mut data = ClientData::default();
        for (i, s) in seqs.into_iter().enumerate() {
            if i == test_idx {
                data.test_sequences.push(s.sequence);
                data.test.extend(s.windows);
            } else {
                data.train_sequences.push(s.sequence);
                data.train.extend(s.windows);
            }
        }
        clients.insert(individual, data);
    }
    let (steps, features) = shape.unwrap_or((0, 0));
    Ok(DatasetSplit {
        steps,
        features,
        clients,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Origin;
    use std::collections::HashSet;

    fn seq(ind: &str, num: u32, n: usize) -> SequenceData {
        let name = format!("{ind}{num:02}");
        SequenceData {
            individual: ind.into(),
            sequence: name.clone(),
            windows: (0..n)
                .map(|start| {
                    SequenceWindow::new(
                        2,
                        9,
                        vec![0.0; 18],
                        0,
                        Origin {
                            individual: ind.into(),
                            sequence: name.clone(),
                            start,
                            synthetic: false,
                        },
                    )
                })
                .collect(),
        }
    }

    fn full() -> Vec<SequenceData> {
        let mut v = Vec::new();
        for ind in ["A", "B", "C", "D", "E"] {
            for num in 1..=5 {
                v.push(seq(ind, num, 3 + num as usize));
            }
        }
        v
    }

    #[test]
    fn four_train_one_test_per_individual() {
        let s = split_train_test(full(), TestSelection::Last).unwrap();
        assert_eq!(s.clients.len(), 5);
        let train_seqs: usize = s.clients.values().map(|c| c.train_sequences.len()).sum();
        let test_seqs: usize = s.clients.values().map(|c| c.test_sequences.len()).sum();
        assert_eq!((train_seqs, test_seqs), (20, 5));
        assert_eq!(s.clients["E"].test_sequences, vec!["E05".to_string()]);
        assert_eq!(s.num_test(), 5 * 8);
    }

    #[test]
    fn origins_are_disjoint() {
        let s = split_train_test(full(), TestSelection::Number(2)).unwrap();
        let train: HashSet<(String, usize)> =
            s.train().map(|w| (w.origin.sequence.clone(), w.origin.start)).collect();
        assert!(s.test().all(|w| !train.contains(&(w.origin.sequence.clone(), w.origin.start))));
        assert_eq!(s.clients["A"].test_sequences, vec!["A02".to_string()]);
    }

    #[test]
    fn too_few_sequences_is_an_error() {
        let v = vec![seq("A", 1, 3), seq("A", 2, 3), seq("B", 1, 3)];
        assert!(split_train_test(v, TestSelection::Last).is_err());
        assert!(split_train_test(full(), TestSelection::Number(9)).is_err());
    }
}
