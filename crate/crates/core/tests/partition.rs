use fedyolo::dataio::{
    generate_synthetic, partition, split_train_test, PartitionMode, PartitionSpec, Sample, SynthSpec,
};
use proptest::prelude::*;

fn samples(n: usize) -> Vec<Sample> {
    generate_synthetic(&SynthSpec::new(n, 16, 42)).unwrap()
}

fn assert_disjoint_cover(parts: &[Vec<usize>], n: usize) {
    let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..n).collect::<Vec<_>>());
}

#[test]
fn iid_hundred_into_four_quarters() {
    let s = samples(100);
    let parts = partition(&s, &PartitionSpec { mode: PartitionMode::Iid, num_clients: 4, seed: 1 }).unwrap();
    assert!(parts.iter().all(|p| p.len() == 25));
    assert_disjoint_cover(&parts, 100);
}

#[test]
fn dirichlet_golden() {
    let s = samples(60);
    let spec = PartitionSpec { mode: PartitionMode::Dirichlet { alpha: 0.5 }, num_clients: 3, seed: 7 };
    let parts = partition(&s, &spec).unwrap();
    assert_disjoint_cover(&parts, 60);
    let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
    assert_eq!(sizes, vec![21, 8, 31]);
    assert_eq!(parts[1], vec![3, 6, 21, 24, 31, 39, 50, 58]);
    assert_eq!(parts, partition(&s, &spec).unwrap());
}

#[test]
fn single_client_keeps_order() {
    let s = samples(9);
    let parts = partition(&s, &PartitionSpec { mode: PartitionMode::Iid, num_clients: 1, seed: 3 }).unwrap();
    assert_eq!(parts, vec![(0..9).collect::<Vec<_>>()]);
}

#[test]
fn too_few_samples() {
    let s = samples(2);
    assert!(partition(&s, &PartitionSpec { mode: PartitionMode::Iid, num_clients: 3, seed: 0 }).is_err());
    assert!(partition(&s, &PartitionSpec { mode: PartitionMode::Iid, num_clients: 0, seed: 0 }).is_err());
}

#[test]
fn split_is_disjoint_and_stratified() {
    let s = samples(90);
    let (train, test) = split_train_test(&s, 0.8, 5).unwrap();
    let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..90).collect::<Vec<_>>());
    for c in 0..3 {
        let total = s.iter().filter(|x| x.primary_class() == Some(c)).count();
        let in_test = test.iter().filter(|&&i| s[i].primary_class() == Some(c)).count();
        assert!((in_test as f64 - 0.2 * total as f64).abs() <= 1.0, "class {c}: {in_test} of {total}");
    }
    assert_eq!((train, test), split_train_test(&s, 0.8, 5).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn partitions_cover_every_sample_once(n in 8usize..40, k in 1usize..5, seed in any::<u64>(), alpha in 0.3f64..5.0, iid in any::<bool>()) {
        let s = samples(n);
        let mode = if iid { PartitionMode::Iid } else { PartitionMode::Dirichlet { alpha } };
        if let Ok(parts) = partition(&s, &PartitionSpec { mode, num_clients: k, seed }) {
            prop_assert_eq!(parts.len(), k);
            prop_assert!(parts.iter().all(|p| !p.is_empty()));
            assert_disjoint_cover(&parts, n);
            if iid {
                let (lo, hi) = (parts.iter().map(Vec::len).min().unwrap(), parts.iter().map(Vec::len).max().unwrap());
                prop_assert!(hi - lo <= 1);
            }
        } else {
            prop_assert!(!iid);
        }
    }
}
