use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::ClientUpdate;
use crate::data::SequenceWindow;
use crate::error::{Error, Result};
use crate::eval::ConfusionCounts;
use crate::exec::Execution;
use crate::nn::{predict_proba, train_epoch, AdamState, ModelParams};
use crate::seed;

/// A client's windows together with a log of who read them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrivateDataset {
    owner: String,
    windows: Vec<SequenceWindow>,
    reads: BTreeMap<String, usize>,
}

impl PrivateDataset {
    pub fn new(owner: impl Into<String>, windows: Vec<SequenceWindow>) -> Self {
        Self {
            owner: owner.into(),
            windows,
            reads: BTreeMap::new(),
        }
    }

    /// Read access; every call is recorded under `reader`.
    pub fn read(&mut self, reader: &str) -> &[SequenceWindow] {
        *self.reads.entry(reader.to_string()).or_default() += 1;
        &self.windows
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn push(&mut self, w: SequenceWindow) {
        self.windows.push(w);
    }

    pub fn owner(&self) -> &str {
        &self.owner
    }

    /// Read counts per reader.
    pub fn audit(&self) -> &BTreeMap<String, usize> {
        &self.reads
    }

    /// Reads by anyone other than the owner.
    pub fn foreign_reads(&self) -> usize {
        self.reads
            .iter()
            .filter(|(r, _)| r.as_str() != self.owner)
            .map(|(_, n)| n)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub client_id: String,
    pub sequence: String,
    pub start: usize,
    pub probability: f64,
    pub response: u8,
    pub true_label: u8,
    pub round: usize,
}

/// Result of one client's local training in a round.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalOutcome {
    pub update: ClientUpdate,
    /// Per-epoch `(bce, penalty)`.
    pub epoch_losses: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub client_id: String,
    pub dataset: PrivateDataset,
    pub validation: PrivateDataset,
    pub test: PrivateDataset,
    /// Unlabeled live windows, consumed in order by the alert loop.
    pub stream: Vec<SequenceWindow>,
    pub stream_cursor: usize,
    pub local_params: ModelParams,
    pub adam: AdamState,
    pub rng_seed: u64,
    pub epochs_per_round: usize,
    pub feedback_log: Vec<FeedbackEvent>,
}

/// Splits `windows` into `(rest, held)` with `round(fraction·count)` of each
/// label held out, chosen by a seeded shuffle. Order within each part follows
/// the input.
pub fn stratified_holdout(windows: Vec<SequenceWindow>, fraction: f64, rng: &mut seed::SimRng) -> (Vec<SequenceWindow>, Vec<SequenceWindow>) {
    let mut held = vec![false; windows.len()];
    for label in [0u8, 1] {
        let mut idx: Vec<usize> = (0..windows.len()).filter(|&i| windows[i].label == label).collect();
        idx.shuffle(rng);
        let k = (fraction * idx.len() as f64).round() as usize;
        for &i in &idx[..k.min(idx.len())] {
            held[i] = true;
        }
    }
    let mut rest = Vec::new();
    let mut out = Vec::new();
    for (w, h) in windows.into_iter().zip(held) {
        if h {
            out.push(w);
        } else {
            rest.push(w);
        }
    }
    (rest, out)
}

impl ClientState {
    pub fn new(
        client_id: impl Into<String>,
        train: Vec<SequenceWindow>,
        validation: Vec<SequenceWindow>,
        test: Vec<SequenceWindow>,
        stream: Vec<SequenceWindow>,
        initial: ModelParams,
        rng_seed: u64,
        epochs_per_round: usize,
    ) -> Result<Self> {
        let client_id = client_id.into();
        if epochs_per_round == 0 {
            return Err(Error::invalid(format!("client {client_id}: epochs per round must be >= 1")));
        }
        Ok(Self {
            dataset: PrivateDataset::new(client_id.clone(), train),
            validation: PrivateDataset::new(client_id.clone(), validation),
            test: PrivateDataset::new(client_id.clone(), test),
            stream,
            stream_cursor: 0,
            adam: AdamState::new(&initial),
            local_params: initial,
            rng_seed,
            epochs_per_round,
            feedback_log: Vec::new(),
            client_id,
        })
    }

    /// Runs `epochs_per_round` epochs of Adam on the local dataset,
    /// minimizing BCE plus `mu·‖w − w_g‖²` against the frozen `global`.
    /// When `restart` is set the local model and optimizer first reset to
    /// `global`. Returns `None` (with a warning) for an empty dataset.
    pub fn local_train(
        &mut self,
        global: &ModelParams,
        mu: f64,
        batch_size: usize,
        lr: f64,
        restart: bool,
        round: usize,
    ) -> Result<Option<LocalOutcome>> {
        if self.dataset.is_empty() {
            log::warn!("client {}: empty dataset, skipped in round {round}", self.client_id);
            return Ok(None);
        }
        if restart {
            self.local_params = global.clone();
            self.adam.reset();
        }
        let id = self.client_id.clone();
        let data = self.dataset.read(&id);
        let mut losses = Vec::with_capacity(self.epochs_per_round);
        for epoch in 0..self.epochs_per_round {
            let mut rng = seed::rng(seed::derive_indexed(
                self.rng_seed,
                "local-epoch",
                (round as u64) << 20 | epoch as u64,
            ));
            let prox = (mu > 0.0).then_some((global, mu));
            let stats = train_epoch(&mut self.local_params, &mut self.adam, data, batch_size, lr, prox, &mut rng)?;
            losses.push((stats.bce, stats.penalty));
        }
        Ok(Some(LocalOutcome {
            update: ClientUpdate {
                client_id: id,
                params: self.local_params.to_vector(),
                epochs_trained: self.epochs_per_round,
                sample_count: data.len(),
            },
            epoch_losses: losses,
        }))
    }

    /// Deployed probabilities on `windows`: the global model alone, or the
    /// mean of global and local when `ensemble` is set.
    fn infer(&self, global: &ModelParams, windows: &[SequenceWindow], ensemble: bool) -> Result<Vec<f64>> {
        if ensemble {
            ensemble_predict(global, &self.local_params, windows, Execution::Sequential)
        } else {
            predict_proba(global, windows, Execution::Sequential)
        }
    }

    /// Confusion counts on the local validation windows.
    pub fn validate(&mut self, global: &ModelParams, ensemble: bool, threshold: f64) -> Result<ConfusionCounts> {
        let id = self.client_id.clone();
        let windows = self.validation.read(&id).to_vec();
        let probs = self.infer(global, &windows, ensemble)?;
        let mut c = ConfusionCounts::default();
        for (p, w) in probs.iter().zip(&windows) {
            c.record(classify(*p, threshold), w.label)?;
        }
        Ok(c)
    }

    /// `(window, probability)` for every local test window.
    pub fn test_predictions(&mut self, global: &ModelParams, ensemble: bool) -> Result<Vec<(SequenceWindow, f64)>> {
        let id = self.client_id.clone();
        let windows = self.test.read(&id).to_vec();
        let probs = self.infer(global, &windows, ensemble)?;
        Ok(windows.into_iter().zip(probs).collect())
    }

    /// Mean eval-mode BCE of the deployed model on the local test windows.
    pub fn test_loss(&mut self, global: &ModelParams, ensemble: bool) -> Result<f64> {
        let preds = self.test_predictions(global, ensemble)?;
        let probs: Vec<f64> = preds.iter().map(|(_, p)| *p).collect();
        let labels: Vec<u8> = preds.iter().map(|(w, _)| w.label).collect();
        Ok(crate::nn::bce_loss(&probs, &labels)?.0)
    }

    /// Raises an alert when `probability > theta`. The oracle answers with
    /// the window's true label, flipped with probability `noise`, and the
    /// labeled window is appended to the local dataset.
    pub fn alert_and_feedback(
        &mut self,
        window: &SequenceWindow,
        probability: f64,
        theta: f64,
        noise: f64,
        round: usize,
        rng: &mut seed::SimRng,
    ) -> Option<FeedbackEvent> {
        if probability <= theta {
            return None;
        }
        let flip = noise > 0.0 && rng.gen_bool(noise.min(1.0));
        let response = if flip { 1 - window.label } else { window.label };
        let mut labeled = window.clone();
        labeled.label = response;
        self.dataset.push(labeled);
        let ev = FeedbackEvent {
            client_id: self.client_id.clone(),
            sequence: window.origin.sequence.clone(),
            start: window.origin.start,
            probability,
            response,
            true_label: window.label,
            round,
        };
        self.feedback_log.push(ev.clone());
        Some(ev)
    }

    /// Runs the alert loop over the next `chunk` stream windows. Returns the
    /// number of alerts (each one added a labeled window).
    pub fn monitor_stream(
        &mut self,
        global: &ModelParams,
        ensemble: bool,
        chunk: usize,
        theta: f64,
        noise: f64,
        round: usize,
    ) -> Result<usize> {
        let end = (self.stream_cursor + chunk).min(self.stream.len());
        if end <= self.stream_cursor {
            return Ok(0);
        }
        let windows = self.stream[self.stream_cursor..end].to_vec();
        self.stream_cursor = end;
        let probs = self.infer(global, &windows, ensemble)?;
        let mut rng = seed::rng(seed::derive_indexed(self.rng_seed, "feedback-oracle", round as u64));
        let mut alerts = 0;
        for (w, p) in windows.iter().zip(probs) {
            if self.alert_and_feedback(w, p, theta, noise, round, &mut rng).is_some() {
                alerts += 1;
            }
        }
        Ok(alerts)
    }
}

/// `1` iff `probability > threshold`.
pub fn classify(probability: f64, threshold: f64) -> u8 {
    u8::from(probability > threshold)
}

/// `(f_g(x) + f_i(x)) / 2` for every window.
pub fn ensemble_predict(global: &ModelParams, local: &ModelParams, windows: &[SequenceWindow], exec: Execution) -> Result<Vec<f64>> {
    if global.arch != local.arch {
        return Err(Error::ShapeMismatch {
            context: "ensemble_predict",
            expected: format!("{:?}", global.arch),
            actual: format!("{:?}", local.arch),
        });
    }
    let g = predict_proba(global, windows, exec)?;
    let l = predict_proba(local, windows, exec)?;
    Ok(g.iter().zip(&l).map(|(a, b)| (a + b) / 2.0).collect())
}
