use serde::{Deserialize, Serialize};

use super::client::ClientState;
use crate::aggregation::{fedavg, swa_aggregate, ClientUpdate, SwaConfig};
use crate::error::{Error, Result};
use crate::eval::{ExperimentConfig, LocalStart, Scenario, Transport};
use crate::exec::{self, Execution};
use crate::nn::ModelParams;
use crate::params::ParameterVector;
use crate::secure::{self, FixedPointCodec, HeKeyPair};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Fedavg,
    Swa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundConfig {
    pub global_epochs: usize,
    pub client_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub mu: f64,
    pub classification_threshold: f64,
    pub alert_threshold: f64,
    pub swa: SwaConfig,
    pub early_stop_patience: usize,
    pub local_start: LocalStart,
    pub transport: Transport,
    pub codec: FixedPointCodec,
}

impl Default for RoundConfig {
    fn default() -> Self {
        Self::from_experiment(&ExperimentConfig::default()).expect("defaults are valid")
    }
}

impl RoundConfig {
    pub fn from_experiment(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            global_epochs: cfg.global_epochs,
            client_epochs: cfg.client_epochs,
            batch_size: cfg.batch_size,
            lr: cfg.lr,
            mu: cfg.mu,
            classification_threshold: cfg.classification_threshold,
            alert_threshold: cfg.alert_threshold,
            swa: cfg.swa(),
            early_stop_patience: cfg.early_stop_patience,
            local_start: cfg.local_start,
            transport: cfg.transport,
            codec: cfg.codec()?,
        })
    }

    /// Whether clients restart from the global model each round.
    pub fn restarts(&self, strategy: Strategy) -> bool {
        match self.local_start {
            LocalStart::Global => true,
            LocalStart::Persistent => false,
            LocalStart::Auto => strategy == Strategy::Fedavg,
        }
    }

    pub fn strategy_for(scenario: Scenario) -> Strategy {
        if scenario.uses_swa() {
            Strategy::Swa
        } else {
            Strategy::Fedavg
        }
    }
}

pub struct ServerState {
    pub global: ModelParams,
    pub round: usize,
    /// Present when updates travel encrypted.
    pub keys: Option<HeKeyPair>,
    pub seed: u64,
}

impl ServerState {
    pub fn new(global: ModelParams, seed_value: u64) -> Self {
        Self {
            global,
            round: 0,
            keys: None,
            seed: seed_value,
        }
    }
}

/// One line of the round log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RoundRecord {
    Client {
        round: usize,
        client: String,
        /// Last-epoch BCE plus penalty.
        loss: f64,
        bce: f64,
        penalty: f64,
        update_norm: f64,
        epochs: usize,
        samples: usize,
        skipped: bool,
    },
    Feedback {
        round: usize,
        client: String,
        alerts: usize,
        dataset_size: usize,
    },
    Server {
        round: usize,
        strategy: Strategy,
        clients: usize,
        global_norm: f64,
        transport: Transport,
        ensemble: bool,
        validation_recall: Option<f64>,
        validation_f1: Option<f64>,
        train_loss: Option<f64>,
        validation_loss: Option<f64>,
    },
}

/// Trains every client against the same incoming global model. Clients run
/// concurrently under [`Execution::Parallel`]; each uses only its own state.
pub fn collect_updates(
    global: &ModelParams,
    clients: &mut [ClientState],
    cfg: &RoundConfig,
    strategy: Strategy,
    mu: f64,
    round: usize,
    exec: Execution,
) -> Result<(Vec<ClientUpdate>, Vec<RoundRecord>)> {
    let restart = cfg.restarts(strategy);
    let outcomes = exec::map_slice_mut(exec, clients, |c| {
        c.local_train(global, mu, cfg.batch_size, cfg.lr, restart, round)
    });
    let gv = global.to_vector();
    let mut updates = Vec::new();
    let mut log = Vec::new();
    for (c, o) in clients.iter().zip(outcomes) {
        match o? {
            Some(o) => {
                let (bce, penalty) = *o.epoch_losses.last().expect("at least one epoch");
                log.push(RoundRecord::Client {
                    round,
                    client: c.client_id.clone(),
                    loss: bce + penalty,
                    bce,
                    penalty,
                    update_norm: o.update.params.sub(&gv)?.l2_norm(),
                    epochs: o.update.epochs_trained,
                    samples: o.update.sample_count,
                    skipped: false,
                });
                updates.push(o.update);
            }
            None => log.push(RoundRecord::Client {
                round,
                client: c.client_id.clone(),
                loss: f64::NAN,
                bce: f64::NAN,
                penalty: f64::NAN,
                update_norm: 0.0,
                epochs: 0,
                samples: 0,
                skipped: true,
            }),
        }
    }
    Ok((updates, log))
}

/// Server-side combination of one round's updates.
pub fn aggregate(
    global: &ParameterVector,
    updates: &[ClientUpdate],
    strategy: Strategy,
    swa: &SwaConfig,
    exec: Execution,
) -> Result<ParameterVector> {
    match strategy {
        Strategy::Fedavg => fedavg(updates),
        Strategy::Swa => swa_aggregate(global, updates, swa, exec),
    }
}

/// Encrypted transport: each client encrypts its parameters; weighted
/// averaging is done on ciphertexts, robust aggregation after decryption.
fn aggregate_encrypted(
    server: &ServerState,
    global: &ParameterVector,
    updates: &[ClientUpdate],
    strategy: Strategy,
    cfg: &RoundConfig,
    exec: Execution,
) -> Result<ParameterVector> {
    let keys = server
        .keys
        .as_ref()
        .ok_or_else(|| Error::Config("encrypted transport without a key pair".into()))?;
    let mut sent = Vec::with_capacity(updates.len());
    for u in updates {
        let nonce = seed::derive_indexed(server.seed, &format!("transport-{}", u.client_id), server.round as u64);
        let e = secure::encrypt_vector(&u.params, &keys.public, &cfg.codec, nonce, exec)?;
        sent.push(e.vector);
    }
    match strategy {
        Strategy::Fedavg => {
            let weights: Vec<u64> = updates.iter().map(|u| u.sample_count as u64).collect();
            let total: u64 = weights.iter().sum();
            if total == 0 {
                return Err(Error::invalid("fedavg over zero total samples"));
            }
            let sum = secure::encrypted_weighted_sum(&sent, Some(&weights), &keys.public, exec)?;
            let plain = secure::decrypt_vector(&sum, keys, &cfg.codec, exec)?;
            Ok(plain.scaled(1.0 / total as f64))
        }
        Strategy::Swa => {
            let mut opened = Vec::with_capacity(updates.len());
            for (u, e) in updates.iter().zip(&sent) {
                opened.push(ClientUpdate {
                    params: secure::decrypt_vector(e, keys, &cfg.codec, exec)?,
                    ..u.clone()
                });
            }
            swa_aggregate(global, &opened, &cfg.swa, exec)
        }
    }
}

/// One communication round: local training, then aggregation at the
/// barrier. The new global model depends only on this round's updates and
/// the incoming global model.
pub fn run_round(
    server: &mut ServerState,
    clients: &mut [ClientState],
    cfg: &RoundConfig,
    strategy: Strategy,
    mu: f64,
    exec: Execution,
) -> Result<Vec<RoundRecord>> {
    let round = server.round;
    let (updates, mut log) = collect_updates(&server.global, clients, cfg, strategy, mu, round, exec)?;
    if updates.is_empty() {
        return Err(Error::invalid(format!("round {round}: no client produced an update")));
    }
    let gv = server.global.to_vector();
    let next = match cfg.transport {
        Transport::Plain => aggregate(&gv, &updates, strategy, &cfg.swa, exec),
        Transport::Encrypted => aggregate_encrypted(server, &gv, &updates, strategy, cfg, exec),
    }
    .inspect_err(|e| log::error!("round {round} aborted: {e}"))?;
    let mut global = server.global.clone();
    global.load_vector(&next)?;
    let bces: Vec<f64> = log
        .iter()
        .filter_map(|r| match r {
            RoundRecord::Client { bce, skipped: false, .. } => Some(*bce),
            _ => None,
        })
        .collect();
    let train_loss = (!bces.is_empty()).then(|| bces.iter().sum::<f64>() / bces.len() as f64);
    log.push(RoundRecord::Server {
        round,
        strategy,
        clients: updates.len(),
        global_norm: next.l2_norm(),
        transport: cfg.transport,
        ensemble: false,
        validation_recall: None,
        validation_f1: None,
        train_loss,
        validation_loss: None,
    });
    server.global = global;
    server.round += 1;
    Ok(log)
}
