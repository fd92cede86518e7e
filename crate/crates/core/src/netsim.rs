//! Deterministic communication and compute cost model.
//!
//! A round opens with every client downloading the global checkpoint at the
//! same instant, then training, then uploading. The round closes when the
//! slowest client's upload lands; server aggregation time is taken as zero.
//! Simulated time is reporting only and never feeds back into training.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Bytes per second; `f64::INFINITY` means transfers are free.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidth(pub f64);

impl Bandwidth {
    pub const UNLIMITED: Bandwidth = Bandwidth(f64::INFINITY);

    pub fn transfer_seconds(self, bytes: u64) -> f64 {
        if self.0.is_infinite() {
            0.0
        } else {
            bytes as f64 / self.0
        }
    }
}

// JSON has no infinity, so the unlimited sentinel is spelled "inf".
impl Serialize for Bandwidth {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Bandwidth(v)),
            Raw::Text(t) if t == "inf" => Ok(Bandwidth::UNLIMITED),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bandwidth must be a number or \"inf\", got {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientLink {
    pub uplink: Bandwidth,
    pub downlink: Bandwidth,
    /// One-way latency in seconds.
    pub latency: f64,
    /// Seconds of compute per processed sample.
    pub compute_per_sample: f64,
}

impl Default for ClientLink {
    /// 50 ms latency, 10 MB/s both ways, free compute.
    fn default() -> Self {
        Self { uplink: Bandwidth(10e6), downlink: Bandwidth(10e6), latency: 0.05, compute_per_sample: 0.0 }
    }
}

impl ClientLink {
    pub fn validate(&self) -> Result<(), String> {
        for (name, bw) in [("uplink", self.uplink), ("downlink", self.downlink)] {
            if bw.0.is_nan() || bw.0 <= 0.0 {
                return Err(format!("{name} bandwidth must be > 0, got {}", bw.0));
            }
        }
        if !(self.latency.is_finite() && self.latency >= 0.0) {
            return Err(format!("latency must be >= 0, got {}", self.latency));
        }
        if !(self.compute_per_sample.is_finite() && self.compute_per_sample >= 0.0) {
            return Err(format!("compute_per_sample must be >= 0, got {}", self.compute_per_sample));
        }
        Ok(())
    }

    pub fn download_seconds(&self, bytes: u64) -> f64 {
        self.latency + self.downlink.transfer_seconds(bytes)
    }

    pub fn upload_seconds(&self, bytes: u64) -> f64 {
        self.latency + self.uplink.transfer_seconds(bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetProfile {
    pub clients: Vec<ClientLink>,
}

impl NetProfile {
    pub fn uniform(num_clients: usize, link: ClientLink) -> Self {
        Self { clients: vec![link; num_clients] }
    }

    /// Zero latency, unlimited bandwidth.
    pub fn ideal(num_clients: usize, compute_per_sample: f64) -> Self {
        Self::uniform(
            num_clients,
            ClientLink {
                uplink: Bandwidth::UNLIMITED,
                downlink: Bandwidth::UNLIMITED,
                latency: 0.0,
                compute_per_sample,
            },
        )
    }

    pub fn validate(&self) -> Result<(), String> {
        for (i, c) in self.clients.iter().enumerate() {
            c.validate().map_err(|e| format!("client {i}: {e}"))?;
        }
        Ok(())
    }
}

/// `max_n [lat + bytes/down + I*|D_n|*cost + lat + bytes/up]`.
pub fn round_time(profile: &NetProfile, checkpoint_bytes: u64, samples: &[usize], epochs: usize) -> f64 {
    profile
        .clients
        .iter()
        .zip(samples)
        .map(|(link, &n)| client_round_seconds(link, checkpoint_bytes, n * epochs))
        .fold(0.0, f64::max)
}

fn client_round_seconds(link: &ClientLink, bytes: u64, processed: usize) -> f64 {
    link.download_seconds(bytes) + processed as f64 * link.compute_per_sample + link.upload_seconds(bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientCost {
    pub compute_seconds: f64,
    pub transfer_seconds: f64,
    pub samples_processed: usize,
    pub bytes_up: u64,
    pub bytes_down: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundCost {
    pub round: usize,
    pub clients: Vec<ClientCost>,
    pub round_seconds: f64,
}

impl RoundCost {
    pub fn bytes_up(&self) -> u64 {
        self.clients.iter().map(|c| c.bytes_up).sum()
    }

    pub fn bytes_down(&self) -> u64 {
        self.clients.iter().map(|c| c.bytes_down).sum()
    }

    pub fn samples_processed(&self) -> usize {
        self.clients.iter().map(|c| c.samples_processed).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub rounds: Vec<RoundCost>,
}

impl CostLedger {
    /// Record one round. `processed[n]` is what client `n` actually processed.
    pub fn record_round(&mut self, profile: &NetProfile, checkpoint_bytes: u64, processed: &[usize]) -> &RoundCost {
        let clients: Vec<ClientCost> = profile
            .clients
            .iter()
            .zip(processed)
            .map(|(link, &n)| ClientCost {
                compute_seconds: n as f64 * link.compute_per_sample,
                transfer_seconds: link.download_seconds(checkpoint_bytes) + link.upload_seconds(checkpoint_bytes),
                samples_processed: n,
                bytes_up: checkpoint_bytes,
                bytes_down: checkpoint_bytes,
            })
            .collect();
        let round_seconds = profile
            .clients
            .iter()
            .zip(processed)
            .map(|(link, &n)| client_round_seconds(link, checkpoint_bytes, n))
            .fold(0.0, f64::max);
        self.rounds.push(RoundCost { round: self.rounds.len() + 1, clients, round_seconds });
        self.rounds.last().expect("just pushed")
    }

    pub fn total_samples(&self) -> usize {
        self.rounds.iter().map(RoundCost::samples_processed).sum()
    }

    pub fn total_seconds(&self) -> f64 {
        self.rounds.iter().map(|r| r.round_seconds).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.rounds.iter().map(|r| r.bytes_up() + r.bytes_down()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LedgerIssue {
    RoundCount { expected: usize, actual: usize },
    ClientCount { round: usize, expected: usize, actual: usize },
    Samples { round: usize, client: usize, expected: usize, actual: usize },
    TotalSamples { expected: usize, actual: usize },
    RoundTime { round: usize, expected: f64, actual: f64 },
}

impl fmt::Display for LedgerIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LedgerIssue::RoundCount { expected, actual } => {
                write!(f, "ledger has {actual} rounds, expected {expected}")
            }
            LedgerIssue::ClientCount { round, expected, actual } => {
                write!(f, "round {round}: {actual} clients, expected {expected}")
            }
            LedgerIssue::Samples { round, client, expected, actual } => {
                write!(f, "round {round}, client {client}: processed {actual} samples, expected {expected}")
            }
            LedgerIssue::TotalSamples { expected, actual } => {
                write!(f, "total samples {actual}, expected {expected}")
            }
            LedgerIssue::RoundTime { round, expected, actual } => {
                write!(f, "round {round}: time {actual}, expected {expected}")
            }
        }
    }
}

/// Check the ledger against `K * sum_n I * |D_n|` and the per-round
/// max-over-clients time rule. Returns every violation found.
pub fn ledger_check(
    ledger: &CostLedger,
    profile: &NetProfile,
    checkpoint_bytes: u64,
    num_rounds: usize,
    local_epochs: usize,
    client_sizes: &[usize],
) -> Result<(), Vec<LedgerIssue>> {
    let mut issues = Vec::new();
    if ledger.rounds.len() != num_rounds {
        issues.push(LedgerIssue::RoundCount { expected: num_rounds, actual: ledger.rounds.len() });
    }
    for r in &ledger.rounds {
        if r.clients.len() != client_sizes.len() {
            issues.push(LedgerIssue::ClientCount {
                round: r.round,
                expected: client_sizes.len(),
                actual: r.clients.len(),
            });
            continue;
        }
        for (n, (c, &size)) in r.clients.iter().zip(client_sizes).enumerate() {
            if c.samples_processed != local_epochs * size {
                issues.push(LedgerIssue::Samples {
                    round: r.round,
                    client: n,
                    expected: local_epochs * size,
                    actual: c.samples_processed,
                });
            }
        }
        let expected = round_time(profile, checkpoint_bytes, client_sizes, local_epochs);
        if (expected - r.round_seconds).abs() > 1e-9 * expected.abs().max(1.0) {
            issues.push(LedgerIssue::RoundTime { round: r.round, expected, actual: r.round_seconds });
        }
    }
    let expected_total = num_rounds * local_epochs * client_sizes.iter().sum::<usize>();
    if ledger.total_samples() != expected_total {
        issues.push(LedgerIssue::TotalSamples { expected: expected_total, actual: ledger.total_samples() });
    }
    if issues.is_empty() {
        Ok(())
    } else {
        Err(issues)
    }
}
