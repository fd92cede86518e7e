use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{DataError, Sample};

const MAX_REDRAWS: usize = 100;

/// Stratified, seeded train/test split.
///
/// The train side gets `ceil(fraction * n)` samples; per-stratum quotas use
/// largest remainders so every class appears on both sides when it can.
/// Both halves are returned as ascending original indices.
pub fn split_train_test(samples: &[Sample], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    let n = samples.len();
    if n < 2 {
        return Err(DataError::Split(format!("need at least 2 samples, got {n}")));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::Split(format!("fraction {fraction} not in (0, 1)")));
    }
    let n_train = ((fraction * n as f64) - 1e-9).ceil() as usize;
    let n_train = n_train.clamp(1, n - 1);

    let mut strata: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        strata.entry(s.primary_class()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for members in strata.values_mut() {
        members.shuffle(&mut rng);
    }

    let mut quotas: Vec<(usize, f64)> = strata
        .values()
        .map(|m| {
            let exact = fraction * m.len() as f64;
            (exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.0).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].1.total_cmp(&quotas[a].1).then(a.cmp(&b)));
    let sizes: Vec<usize> = strata.values().map(Vec::len).collect();
    let mut remaining = n_train.saturating_sub(assigned);
    while remaining > 0 {
        let before = remaining;
        for &k in &order {
            if remaining == 0 {
                break;
            }
            if quotas[k].0 < sizes[k] {
                quotas[k].0 += 1;
                remaining -= 1;
            }
        }
        debug_assert!(remaining < before);
    }

    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(n - n_train);
    for (members, (q, _)) in strata.values().zip(&quotas) {
        train.extend_from_slice(&members[..*q]);
        test.extend_from_slice(&members[*q..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum PartitionMode {
    Iid,
    Dirichlet { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    pub mode: PartitionMode,
    pub num_clients: usize,
    pub seed: u64,
}

/// Assign each sample to one client. Returns per-client ascending indices
/// into `samples`.
pub fn partition(samples: &[Sample], spec: &PartitionSpec) -> Result<Vec<Vec<usize>>, DataError> {
    let n = samples.len();
    let k = spec.num_clients;
    if k == 0 {
        return Err(DataError::Partition("num_clients must be >= 1".into()));
    }
    if n < k {
        return Err(DataError::Partition(format!("{n} samples for {k} clients")));
    }
    if k == 1 {
        return Ok(vec![(0..n).collect()]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut clients = match spec.mode {
        PartitionMode::Iid => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let mut clients = vec![Vec::with_capacity(n / k + 1); k];
            for (pos, i) in idx.into_iter().enumerate() {
                clients[pos % k].push(i);
            }
            clients
        }
        PartitionMode::Dirichlet { alpha } => dirichlet(samples, k, alpha, &mut rng)?,
    };
    for c in &mut clients {
        c.sort_unstable();
    }
    Ok(clients)
}

fn dirichlet(samples: &[Sample], k: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<usize>>, DataError> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|_| DataError::Partition(format!("alpha must be > 0, got {alpha}")))?;
    let mut by_class: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_class.entry(s.primary_class()).or_default().push(i);
    }
    for _ in 0..MAX_REDRAWS {
        let mut clients = vec![Vec::new(); k];
        for members in by_class.values() {
            let mut members = members.clone();
            members.shuffle(rng);
            let mut props: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
            let total: f64 = props.iter().sum();
            if total > 0.0 {
                props.iter_mut().for_each(|p| *p /= total);
            } else {
                // every draw underflowed; hand the whole class to one client
                props = vec![0.0; k];
                props[0] = 1.0;
            }
            let m = members.len();
            let mut start = 0;
            let mut acc = 0.0;
            for (c, p) in props.iter().enumerate() {
                acc += p;
                let end = if c + 1 == k { m } else { ((acc * m as f64).round() as usize).min(m) };
                let end = end.max(start);
                clients[c].extend_from_slice(&members[start..end]);
                start = end;
            }
        }
        if clients.iter().all(|c| !c.is_empty()) {
            return Ok(clients);
        }
    }
    Err(DataError::Partition(format!("a client stayed empty after {MAX_REDRAWS} Dirichlet draws (alpha = {alpha})")))
}

/// Clone the selected samples, in index order.
pub fn materialize(samples: &[Sample], indices: &[usize]) -> Vec<Sample> {
    indices.iter().map(|&i| samples[i].clone()).collect()
}

/// JSON manifest `{"client_0": [...], ...}`.
pub fn partition_manifest(clients: &[Vec<usize>]) -> serde_json::Value {
    let map: serde_json::Map<String, serde_json::Value> =
        clients.iter().enumerate().map(|(c, idx)| (format!("client_{c}"), serde_json::json!(idx))).collect();
    serde_json::Value::Object(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bbox::BBox;
    use crate::dataio::{GrayImage, GroundTruthObject};

    fn samples(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample {
                image: GrayImage::filled(2, 2, 0.0),
                objects: vec![GroundTruthObject { class_id: i % 3, bbox: BBox::new(0.5, 0.5, 0.2, 0.2) }],
            })
            .collect()
    }

    #[test]
    fn eighty_twenty() {
        let (tr, te) = split_train_test(&samples(10), 0.8, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_train_test(&samples(10), 0.8, 1).unwrap(), (tr, te));
    }

    #[test]
    fn split_is_stratified() {
        let s = samples(600);
        let (tr, te) = split_train_test(&s, 0.8, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (480, 120));
        for c in 0..3 {
            assert_eq!(te.iter().filter(|&&i| s[i].objects[0].class_id == c).count(), 40);
        }
    }

    #[test]
    fn split_errors() {
        assert!(split_train_test(&samples(1), 0.8, 0).is_err());
        assert!(split_train_test(&samples(5), 1.0, 0).is_err());
        assert!(split_train_test(&samples(5), 0.0, 0).is_err());
    }

    #[test]
    fn iid_round_robin_sizes() {
        let spec = PartitionSpec { mode: PartitionMode::Iid, num_clients: 4, seed: 9 };
        let parts = partition(&samples(100), &spec).unwrap();
        assert!(parts.iter().all(|p| p.len() == 25));
        let one = PartitionSpec { num_clients: 1, ..spec };
        assert_eq!(partition(&samples(7), &one).unwrap(), vec![(0..7).collect::<Vec<_>>()]);
        let too_many = PartitionSpec { num_clients: 8, ..spec };
        assert!(partition(&samples(7), &too_many).is_err());
    }

    #[test]
    fn manifest_shape() {
        let m = partition_manifest(&[vec![0, 2], vec![1]]);
        assert_eq!(m["client_0"], serde_json::json!([0, 2]));
        assert_eq!(m.as_object().unwrap().len(), 2);
    }
}
