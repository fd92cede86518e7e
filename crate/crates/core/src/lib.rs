//! Deterministic federated training of a grid detector on synthetic scans.

pub mod bbox;
pub mod dataio;
pub mod evaluate;
pub mod federation;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod netsim;
pub mod seed;
pub mod trainer;
