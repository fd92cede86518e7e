mod common;

use fedyolo::bbox::{iou, BBox};
use fedyolo::dataio::GroundTruthObject;
use fedyolo::metrics::{
    average_precision, class_average_precision, confusion, match_detections, precision_recall_f1, sort_detections,
    ApMethod, Detection, ImageEval,
};
use fedyolo_oracles::{ap_exhaustive, iou_exact, iou_raster, Det, Truth};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn random_box(r: &mut ChaCha8Rng) -> BBox {
    let w = r.random_range(0.05..0.6);
    let h = r.random_range(0.05..0.6);
    BBox::new(r.random_range(w / 2.0..1.0 - w / 2.0), r.random_range(h / 2.0..1.0 - h / 2.0), w, h)
}

fn jitter(r: &mut ChaCha8Rng, b: BBox) -> BBox {
    let d = |r: &mut ChaCha8Rng, s: f64| r.random_range(-0.3..0.3) * s;
    BBox::new(b.cx + d(r, b.w), b.cy + d(r, b.h), b.w * r.random_range(0.7..1.3), b.h * r.random_range(0.7..1.3))
}

/// A few images, at most 10 detections in total, scores on a coarse grid so ties happen.
fn random_case(r: &mut ChaCha8Rng, classes: usize) -> Vec<ImageEval> {
    let images = r.random_range(1..=3);
    let mut budget = r.random_range(0..=10usize);
    let mut out = Vec::new();
    for _ in 0..images {
        let truths: Vec<GroundTruthObject> = (0..r.random_range(0..=3))
            .map(|_| GroundTruthObject { class_id: r.random_range(0..classes), bbox: random_box(r) })
            .collect();
        let n = r.random_range(0..=budget);
        budget -= n;
        let mut dets: Vec<Detection> = (0..n)
            .map(|i| {
                let near = !truths.is_empty() && r.random_bool(0.7);
                let (class_id, bbox) = if near {
                    let t = truths[r.random_range(0..truths.len())];
                    let class_id = if r.random_bool(0.85) { t.class_id } else { r.random_range(0..classes) };
                    (class_id, jitter(r, t.bbox))
                } else {
                    (r.random_range(0..classes), random_box(r))
                };
                Detection { class_id, score: r.random_range(1..=8) as f64 / 8.0, bbox, cell: i, box_index: 0 }
            })
            .collect();
        sort_detections(&mut dets);
        out.push(ImageEval { detections: dets, truths });
    }
    out
}

fn to_oracle(images: &[ImageEval]) -> Vec<(Vec<Det>, Vec<Truth>)> {
    images
        .iter()
        .map(|im| {
            (
                im.detections
                    .iter()
                    .map(|d| Det { class_id: d.class_id, score: d.score, bbox: common::boxes4(&d.bbox) })
                    .collect(),
                im.truths.iter().map(|t| Truth { class_id: t.class_id, bbox: common::boxes4(&t.bbox) }).collect(),
            )
        })
        .collect()
}

#[test]
fn ap_matches_exhaustive_cutoff_oracle() {
    let mut r = common::rng(5);
    let mut compared = 0;
    for case in 0..600 {
        let classes = r.random_range(1..=3);
        let images = random_case(&mut r, classes);
        let oracle = to_oracle(&images);
        for class_id in 0..classes {
            for &t in &[0.5, 0.75] {
                let got = class_average_precision(&images, class_id, t, ApMethod::Continuous);
                let want = ap_exhaustive(&oracle, class_id, t);
                match (got, want) {
                    (Some(g), Some(w)) => {
                        assert!((g - w).abs() <= 1e-12, "case {case} class {class_id} iou {t}: {g} vs {w}");
                        compared += 1;
                    }
                    (None, None) => {}
                    other => panic!("case {case}: definedness differs {other:?}"),
                }
            }
        }
    }
    assert!(compared >= 500, "{compared}");
}

#[test]
fn hand_ap_examples() {
    assert_eq!(average_precision(&[(0.9, true)], 1, ApMethod::Continuous), Some(1.0));
    assert_eq!(average_precision(&[(0.9, false), (0.8, true)], 1, ApMethod::Continuous), Some(0.5));
    assert_eq!(average_precision(&[(0.9, true)], 0, ApMethod::Continuous), None);
}

/// Edges on multiples of 1/1000, so every raster pixel is either fully in or out.
fn lattice_box(r: &mut ChaCha8Rng) -> BBox {
    let x0 = r.random_range(0..950u32);
    let y0 = r.random_range(0..950u32);
    let x1 = r.random_range(x0 + 20..=1000.min(x0 + 700));
    let y1 = r.random_range(y0 + 20..=1000.min(y0 + 700));
    let k = |v: u32| v as f64 / 1000.0;
    BBox::new((k(x0) + k(x1)) / 2.0, (k(y0) + k(y1)) / 2.0, k(x1) - k(x0), k(y1) - k(y0))
}

#[test]
fn iou_matches_raster_oracle() {
    let mut r = common::rng(11);
    let mut overlapping = 0;
    for _ in 0..200 {
        let a = lattice_box(&mut r);
        let b = if r.random_bool(0.7) {
            let dx = r.random_range(-60..=60i32) as f64 / 1000.0;
            let dy = r.random_range(-60..=60i32) as f64 / 1000.0;
            let c = BBox::new(a.cx + dx, a.cy + dy, a.w, a.h);
            if c.cx - c.w / 2.0 < 0.0 || c.cy - c.h / 2.0 < 0.0 || c.cx + c.w / 2.0 > 1.0 || c.cy + c.h / 2.0 > 1.0 {
                lattice_box(&mut r)
            } else {
                c
            }
        } else {
            lattice_box(&mut r)
        };
        let got = iou(&a, &b);
        if got > 0.0 {
            overlapping += 1;
        }
        let want = iou_raster(common::boxes4(&a), common::boxes4(&b), 1000);
        assert!((got - want).abs() < 2e-3, "{a:?} {b:?}: {got} vs {want}");
    }
    assert!(overlapping >= 100, "{overlapping}");
}

#[test]
fn iou_matches_corner_formula() {
    let mut r = common::rng(12);
    for _ in 0..5000 {
        let a = random_box(&mut r);
        let b = if r.random_bool(0.6) { jitter(&mut r, a) } else { random_box(&mut r) };
        let want = iou_exact(common::boxes4(&a), common::boxes4(&b));
        assert!((iou(&a, &b) - want).abs() < 1e-12);
    }
}

#[test]
fn prf1_conventions() {
    assert_eq!(precision_recall_f1(0, 0, 0), (0.0, 0.0, 0.0));
    let (p, r, f) = precision_recall_f1(9, 1, 0);
    assert_eq!((p, r), (0.9, 1.0));
    assert!((f - 2.0 * 0.9 / 1.9).abs() < 1e-15);
    let (p, r, f) = precision_recall_f1(3, 1, 1);
    assert_eq!(p, r);
    assert!((f - p).abs() < 1e-15);
    assert_eq!(precision_recall_f1(0, 5, 0), (0.0, 0.0, 0.0));
    assert_eq!(precision_recall_f1(0, 0, 5), (0.0, 0.0, 0.0));
}

#[test]
fn greedy_matching_examples() {
    let t = GroundTruthObject { class_id: 0, bbox: BBox::new(0.5, 0.5, 0.2, 0.2) };
    let d = |class_id, score| Detection { class_id, score, bbox: t.bbox, cell: 0, box_index: 0 };
    let m = match_detections(&[d(0, 0.9)], &[t], 0.5);
    assert_eq!((m.pairs.len(), m.unmatched_detections.len(), m.unmatched_truths.len()), (1, 0, 0));
    let m = match_detections(&[d(1, 0.9)], &[t], 0.5);
    assert_eq!((m.pairs.len(), m.unmatched_detections.len(), m.unmatched_truths.len()), (0, 1, 1));
    let m = match_detections(&[d(0, 0.9), d(0, 0.8)], &[t], 0.5);
    assert_eq!(m.pairs, vec![(0, 0)]);
    assert_eq!(m.unmatched_detections, vec![1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ap_bounded_and_rank_only(
        flags in prop::collection::vec(any::<bool>(), 0..12),
        scores in prop::collection::vec(0.0f64..1.0, 12),
        extra_truths in 0usize..4,
    ) {
        let ranked: Vec<(f64, bool)> = flags.iter().zip(&scores).map(|(&f, &s)| (s, f)).collect();
        let truths = flags.iter().filter(|f| **f).count() + extra_truths;
        if truths == 0 {
            prop_assert!(average_precision(&ranked, truths, ApMethod::Continuous).is_none());
            return Ok(());
        }
        let ap = average_precision(&ranked, truths, ApMethod::Continuous).unwrap();
        prop_assert!((0.0..=1.0).contains(&ap));
        let rescaled: Vec<(f64, bool)> = ranked.iter().map(|&(s, f)| (3.0 * s * s * s + 1.0, f)).collect();
        prop_assert_eq!(Some(ap), average_precision(&rescaled, truths, ApMethod::Continuous));

        let lowest = ranked.iter().map(|x| x.0).fold(f64::INFINITY, f64::min).min(1.0) - 0.5;
        let mut with_fp = ranked.clone();
        with_fp.push((lowest, false));
        prop_assert!(average_precision(&with_fp, truths, ApMethod::Continuous).unwrap() <= ap);
    }

    #[test]
    fn confusion_total_is_matched_plus_leftovers(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let images = random_case(&mut r, 3);
        let m = confusion(&images, 3, 0.45, 0.25);
        let kept: usize = images.iter().map(|im| im.detections.iter().filter(|d| d.score >= 0.25).count()).sum();
        let truths: usize = images.iter().map(|im| im.truths.len()).sum();
        let bg = 3;
        let unmatched_truths: u64 = (0..3).map(|c| m.counts[c][bg]).sum();
        let unmatched_dets: u64 = (0..3).map(|c| m.counts[bg][c]).sum();
        let matched = m.total() - unmatched_truths - unmatched_dets;
        prop_assert_eq!(matched + unmatched_truths, truths as u64);
        prop_assert_eq!(matched + unmatched_dets, kept as u64);
        prop_assert_eq!(m.counts[bg][bg], 0);
    }

    #[test]
    fn iou_symmetric_and_bounded(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let a = random_box(&mut r);
        let b = random_box(&mut r);
        let v = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert_eq!(iou(&a, &a), 1.0);
    }
}
