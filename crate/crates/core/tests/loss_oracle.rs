mod common;

use fedyolo::bbox::BBox;
use fedyolo::dataio::GroundTruthObject;
use fedyolo::loss::{assign_targets, loss, ConfidenceTarget, LossWeights};
use fedyolo::model::{BoxPrediction, GridGeometry, GridPrediction};
use fedyolo_oracles::yolo_loss;
use rand::Rng;

fn geometry(s: usize, b: usize, c: usize) -> GridGeometry {
    GridGeometry { grid_size: s, boxes_per_cell: b, num_classes: c }
}

#[test]
fn perfect_prediction_costs_nothing() {
    let g = geometry(2, 2, 3);
    let truth = [GroundTruthObject { class_id: 1, bbox: BBox::new(0.75, 0.25, 0.25, 0.5) }];
    let mut pred = GridPrediction::zeros(g);
    // cell 1 (row 0, col 1); offsets inside the cell are (0.5, 0.5)
    pred.set_box(1, 0, BoxPrediction { x: 0.5, y: 0.5, w: 0.25, h: 0.5, confidence: 1.0 });
    pred.class_scores_mut(1).copy_from_slice(&[0.0, 1.0, 0.0]);
    let a = assign_targets(&truth, &pred, ConfidenceTarget::Iou).unwrap();
    assert_eq!(a.objects[0].confidence, 1.0);
    let l = loss(&pred, &a, &LossWeights::default()).unwrap();
    assert!(l.total.abs() <= 1e-12, "{l:?}");
    assert_eq!(l.total, 0.0);
}

#[test]
fn coordinate_error_example() {
    let g = geometry(1, 1, 1);
    let truth = [GroundTruthObject { class_id: 0, bbox: BBox::new(0.5, 0.5, 0.25, 0.25) }];
    let mut pred = GridPrediction::zeros(g);
    pred.set_box(0, 0, BoxPrediction { x: 0.6, y: 0.7, w: 0.25, h: 0.25, confidence: 1.0 });
    pred.class_scores_mut(0)[0] = 1.0;
    let a = assign_targets(&truth, &pred, ConfidenceTarget::One).unwrap();
    let l = loss(&pred, &a, &LossWeights::default()).unwrap();
    assert!((l.coord - 0.25).abs() <= 1e-12, "{l:?}");
    assert!((l.total - 0.25).abs() <= 1e-12, "{l:?}");
    assert_eq!(l.size + l.conf_obj + l.conf_noobj + l.classification, 0.0);
}

#[test]
fn empty_cell_confidence_example() {
    let g = geometry(1, 1, 2);
    let mut pred = GridPrediction::zeros(g);
    pred.set_box(0, 0, BoxPrediction { x: 0.0, y: 0.0, w: 0.0, h: 0.0, confidence: 0.5 });
    let a = assign_targets(&[], &pred, ConfidenceTarget::Iou).unwrap();
    let l = loss(&pred, &a, &LossWeights::default()).unwrap();
    assert!((l.total - 0.125).abs() <= 1e-12);
    assert_eq!(l.total, l.conf_noobj);
}

#[test]
fn matches_scalar_oracle_on_random_instances() {
    let mut r = common::rng(2024);
    for case in 0..1000 {
        let s = r.random_range(1..=4);
        let b = r.random_range(1..=3);
        let c = r.random_range(1..=4);
        let g = geometry(s, b, c);
        let values: Vec<f64> = (0..g.len()).map(|_| r.random_range(0.001..1.0)).collect();
        let pred = GridPrediction::from_values(g, values.clone()).unwrap();
        let truths = common::random_truths(&mut r, s, c, 0.5);
        let w = LossWeights {
            lambda_coord: r.random_range(0.0..10.0),
            lambda_conf_obj: r.random_range(0.0..3.0),
            lambda_conf_noobj: r.random_range(0.0..3.0),
        };
        let iou_target = r.random_bool(0.5);
        let target = if iou_target { ConfidenceTarget::Iou } else { ConfidenceTarget::One };
        let a = assign_targets(&truths, &pred, target).unwrap();
        let got = loss(&pred, &a, &w).unwrap();
        let oracle_truths: Vec<(usize, [f64; 4])> =
            truths.iter().map(|t| (t.class_id, common::boxes4(&t.bbox))).collect();
        let want = yolo_loss(
            &values,
            s,
            b,
            c,
            &oracle_truths,
            w.lambda_coord,
            w.lambda_conf_obj,
            w.lambda_conf_noobj,
            iou_target,
        );
        for (name, x, y) in [
            ("coord", got.coord, want.coord),
            ("size", got.size, want.size),
            ("conf_obj", got.conf_obj, want.conf_obj),
            ("conf_noobj", got.conf_noobj, want.conf_noobj),
            ("classification", got.classification, want.classification),
            ("total", got.total, want.total),
        ] {
            assert!((x - y).abs() <= 1e-9, "case {case} {name}: {x} vs {y}");
        }
        assert_eq!(got.total, got.coord + got.size + got.conf_obj + got.conf_noobj + got.classification);
    }
}

#[test]
fn terms_are_nonnegative_and_coord_is_monotone() {
    let mut r = common::rng(77);
    for _ in 0..300 {
        let g = geometry(2, 2, 3);
        let values: Vec<f64> = (0..g.len()).map(|_| r.random_range(0.01..0.99)).collect();
        let mut pred = GridPrediction::from_values(g, values).unwrap();
        let truths = common::random_truths(&mut r, 2, 3, 0.7);
        let a = assign_targets(&truths, &pred, ConfidenceTarget::Iou).unwrap();
        let w = LossWeights::default();
        let l = loss(&pred, &a, &w).unwrap();
        for t in [l.coord, l.size, l.conf_obj, l.conf_noobj, l.classification] {
            assert!(t >= 0.0);
        }
        if let Some(o) = a.objects.first() {
            let mut p = pred.box_at(o.cell, o.box_index);
            let err = p.x - o.x;
            p.x = o.x + err * 1.5 + err.signum() * 0.01;
            pred.set_box(o.cell, o.box_index, p);
            let bigger = loss(&pred, &a, &w).unwrap();
            assert!(bigger.coord > l.coord);
        }
    }
}
