//! Synchronous FedAvg over simulated clients.

mod checkpoint;

pub use checkpoint::{
    checkpoint_size, deserialize_checkpoint, quantize, serialize_checkpoint, CheckpointError, HEADER_BYTES, MAGIC,
    VERSION,
};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataio::Sample;
use crate::evaluate::{evaluate, EvalConfig};
use crate::loss::LossConfig;
use crate::model::{Detector, ModelConfig, ModelError, ParamVector};
use crate::netsim::{CostLedger, NetProfile};
use crate::seed::derive_seed;
use crate::trainer::{train_local, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum FedError {
    #[error("no client vectors to aggregate")]
    Empty,
    #[error("client {client} has {actual} parameters, expected {expected}")]
    LengthMismatch { client: usize, expected: usize, actual: usize },
    #[error("client {client} parameter {index} is not finite")]
    NonFinite { client: usize, index: usize },
    #[error("aggregation weights must be finite, non-negative and not all zero")]
    BadWeights,
    #[error("invalid federation config: {0}")]
    InvalidConfig(String),
    #[error("client {client} failed in round {round}: {source}")]
    Client {
        round: usize,
        client: usize,
        #[source]
        source: TrainError,
    },
    #[error("every client failed in round {0}")]
    AllClientsFailed(usize),
    #[error("validation failed: {0}")]
    Validation(#[source] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// Unweighted FedAvg: the element-wise mean of the client vectors.
///
/// Computed as `v_0 + sum_i (v_i - v_0) / N`, summing in client order, so N
/// identical inputs return that input bit for bit.
pub fn fedavg(clients: &[ParamVector]) -> Result<ParamVector, FedError> {
    let w = vec![1.0; clients.len()];
    fedavg_weighted(clients, &w)
}

/// Weighted FedAvg, `sum_i w_i v_i / sum_i w_i`, with the same shifted form.
pub fn fedavg_weighted(clients: &[ParamVector], weights: &[f64]) -> Result<ParamVector, FedError> {
    let first = clients.first().ok_or(FedError::Empty)?;
    let m = first.len();
    if weights.len() != clients.len() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(FedError::BadWeights);
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(FedError::BadWeights);
    }
    for (client, v) in clients.iter().enumerate() {
        if v.len() != m {
            return Err(FedError::LengthMismatch { client, expected: m, actual: v.len() });
        }
        if let Some(index) = v.first_non_finite() {
            return Err(FedError::NonFinite { client, index });
        }
    }
    let mut out = first.clone();
    for j in 0..m {
        let base = first.0[j];
        let mut acc = 0.0;
        for (v, &w) in clients.iter().zip(weights) {
            acc += w * (v.0[j] - base);
        }
        out.0[j] = base + acc / total;
    }
    Ok(out)
}

/// SHA-256 of the f64 little-endian parameter bytes, as lowercase hex.
pub fn param_checksum(params: &ParamVector) -> String {
    let mut h = Sha256::new();
    for v in &params.0 {
        h.update(v.to_le_bytes());
    }
    hex(&h.finalize())
}

/// SHA-256 of `bytes` as lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(digest: &[u8]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Uniform,
    WeightedBySamples,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    #[default]
    Abort,
    /// Leave a failed client out of that round's average.
    DropClient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedConfig {
    pub num_rounds: usize,
    pub num_clients: usize,
    /// Evaluate on the validation set every this many rounds (0 = never).
    /// The final round is always evaluated when a validation set is given.
    #[serde(default)]
    pub eval_every: usize,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub failure_policy: FailurePolicy,
    /// Give every client its own shuffle stream. When false all clients share
    /// the stream of client 0.
    #[serde(default = "yes")]
    pub per_client_seeds: bool,
}

fn yes() -> bool {
    true
}

impl FedConfig {
    pub fn validate(&self) -> Result<(), FedError> {
        if self.num_rounds == 0 {
            return Err(FedError::InvalidConfig("num_rounds must be >= 1".into()));
        }
        if self.num_clients == 0 {
            return Err(FedError::InvalidConfig("num_clients must be >= 1".into()));
        }
        Ok(())
    }
}

/// Shuffle seed used by `client` in `round` (both 0-based).
pub fn client_seed(shuffle_seed: u64, round: usize, client: usize, per_client: bool) -> u64 {
    let tag = if per_client { client as u64 } else { 0 };
    derive_seed(shuffle_seed, &[round as u64, tag])
}

/// Source of client training data. `round` is 0-based; the default
/// implementations return the same shard every round.
pub trait ClientData: Sync {
    fn num_clients(&self) -> usize;
    fn client_data(&self, round: usize, client: usize) -> &[Sample];
}

impl ClientData for [Vec<Sample>] {
    fn num_clients(&self) -> usize {
        self.len()
    }

    fn client_data(&self, _round: usize, client: usize) -> &[Sample] {
        &self[client]
    }
}

impl ClientData for Vec<Vec<Sample>> {
    fn num_clients(&self) -> usize {
        self.len()
    }

    fn client_data(&self, _round: usize, client: usize) -> &[Sample] {
        &self[client]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationMetrics {
    pub map50: f64,
    pub map50_95: f64,
    pub accuracy: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    /// 1-based.
    pub round: usize,
    /// Mean local training loss per client, `None` for a dropped client.
    pub client_losses: Vec<Option<f64>>,
    pub mean_loss: f64,
    pub checksum: String,
    pub validation: Option<ValidationMetrics>,
    pub round_seconds: f64,
    pub elapsed_seconds: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub samples_processed: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Validation<'a> {
    pub samples: &'a [Sample],
    pub class_names: Vec<String>,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone)]
pub struct FedOutcome {
    pub params: ParamVector,
    pub reports: Vec<RoundReport>,
    pub ledger: CostLedger,
}

#[derive(Debug, Clone)]
pub struct FedSetup<'a> {
    pub model: ModelConfig,
    pub fed: FedConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub net: &'a NetProfile,
    pub threads: usize,
}

type ClientResult = Result<(ParamVector, f64, usize), TrainError>;

fn train_one<D: ClientData + ?Sized>(
    setup: &FedSetup<'_>,
    model: &Detector,
    global: &ParamVector,
    data: &D,
    round: usize,
    client: usize,
) -> ClientResult {
    let mut cfg = setup.train;
    cfg.shuffle_seed = client_seed(setup.train.shuffle_seed, round, client, setup.fed.per_client_seeds);
    let shard = data.client_data(round, client);
    let (theta, traces) = train_local(model, global, shard, &cfg, &setup.loss)?;
    if let Some(i) = theta.first_non_finite() {
        return Err(TrainError::NonFiniteGradient(i));
    }
    let processed = traces.iter().map(|t| t.samples_processed).sum();
    let mean = traces.iter().map(|t| t.mean_loss.total).sum::<f64>() / traces.len() as f64;
    Ok((theta, mean, processed))
}

struct Executor {
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl Executor {
    fn new(threads: usize) -> Result<Self, FedError> {
        #[cfg(feature = "parallel")]
        {
            let pool = if threads > 1 {
                Some(
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(threads)
                        .build()
                        .map_err(|e| FedError::ThreadPool(e.to_string()))?,
                )
            } else {
                None
            };
            Ok(Self { pool })
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = threads;
            Ok(Self {})
        }
    }

    fn train_clients<D: ClientData + ?Sized>(
        &self,
        setup: &FedSetup<'_>,
        model: &Detector,
        global: &ParamVector,
        data: &D,
        round: usize,
    ) -> Vec<ClientResult> {
        let n = setup.fed.num_clients;
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool
                .install(|| (0..n).into_par_iter().map(|c| train_one(setup, model, global, data, round, c)).collect());
        }
        (0..n).map(|c| train_one(setup, model, global, data, round, c)).collect()
    }
}

/// Run `num_rounds` of FedAvg starting from `init`.
///
/// Client results are always aggregated in client order, so the output does
/// not depend on `threads`. `on_round` sees every report as it is produced.
pub fn run_federation<D: ClientData + ?Sized>(
    setup: &FedSetup<'_>,
    init: ParamVector,
    data: &D,
    validation: Option<&Validation<'_>>,
    mut on_round: impl FnMut(&RoundReport),
) -> Result<FedOutcome, FedError> {
    setup.fed.validate()?;
    setup.train.validate().map_err(|e| FedError::InvalidConfig(e.to_string()))?;
    let n = setup.fed.num_clients;
    if data.num_clients() != n {
        return Err(FedError::InvalidConfig(format!("data has {} clients, config expects {n}", data.num_clients())));
    }
    if setup.net.clients.len() != n {
        return Err(FedError::InvalidConfig(format!(
            "network profile has {} clients, config expects {n}",
            setup.net.clients.len()
        )));
    }
    setup.net.validate().map_err(FedError::InvalidConfig)?;
    let model = Detector::new(setup.model)?;
    let m = setup.model.param_count()?;
    if init.len() != m {
        return Err(FedError::LengthMismatch { client: 0, expected: m, actual: init.len() });
    }
    let bytes = checkpoint_size(m) as u64;

    let exec = Executor::new(setup.threads)?;
    let mut global = init;
    let mut ledger = CostLedger::default();
    let mut reports = Vec::with_capacity(setup.fed.num_rounds);
    let mut elapsed = 0.0;
    for round in 0..setup.fed.num_rounds {
        let results = exec.train_clients(setup, &model, &global, data, round);
        let mut kept = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let mut losses = Vec::with_capacity(n);
        let mut processed = Vec::with_capacity(n);
        for (client, r) in results.into_iter().enumerate() {
            match r {
                Ok((theta, loss, count)) => {
                    kept.push(theta);
                    weights.push(match setup.fed.aggregation {
                        Aggregation::Uniform => 1.0,
                        Aggregation::WeightedBySamples => data.client_data(round, client).len() as f64,
                    });
                    losses.push(Some(loss));
                    processed.push(count);
                }
                Err(e) if setup.fed.failure_policy == FailurePolicy::DropClient => {
                    log::warn!("round {}: dropping client {client}: {e}", round + 1);
                    losses.push(None);
                    processed.push(0);
                }
                Err(source) => return Err(FedError::Client { round: round + 1, client, source }),
            }
        }
        if kept.is_empty() {
            return Err(FedError::AllClientsFailed(round + 1));
        }
        global = fedavg_weighted(&kept, &weights)?;
        let cost = ledger.record_round(setup.net, bytes, &processed).clone();
        elapsed += cost.round_seconds;

        let last = round + 1 == setup.fed.num_rounds;
        let due = setup.fed.eval_every > 0 && (round + 1) % setup.fed.eval_every == 0;
        let metrics = match validation {
            Some(v) if last || due => {
                let e = evaluate(&model, &global, v.samples, &v.class_names, &setup.loss, &v.eval)
                    .map_err(FedError::Validation)?;
                Some(ValidationMetrics {
                    map50: e.table.all.map50,
                    map50_95: e.table.all.map50_95,
                    accuracy: e.accuracy(),
                    loss: e.mean_loss,
                })
            }
            _ => None,
        };
        let live: Vec<f64> = losses.iter().flatten().copied().collect();
        let report = RoundReport {
            round: round + 1,
            mean_loss: live.iter().sum::<f64>() / live.len() as f64,
            client_losses: losses,
            checksum: param_checksum(&global),
            validation: metrics,
            round_seconds: cost.round_seconds,
            elapsed_seconds: elapsed,
            bytes_up: cost.bytes_up(),
            bytes_down: cost.bytes_down(),
            samples_processed: cost.samples_processed(),
        };
        log::info!("round {}/{}: mean loss {:.6}", report.round, setup.fed.num_rounds, report.mean_loss);
        on_round(&report);
        reports.push(report);
    }
    Ok(FedOutcome { params: global, reports, ledger })
}
