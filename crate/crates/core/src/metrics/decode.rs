use super::{sort_detections, Detection};
use crate::bbox::iou;
use crate::loss::predicted_box;
use crate::model::GridPrediction;

/// Turn a grid prediction into scored detections.
///
/// Score is `confidence * max class score`, class is the argmax (lowest id on
/// ties). Detections below `conf_threshold` are dropped, then per-class greedy
/// NMS removes any box overlapping a higher-ranked kept box by IoU > `nms_iou`.
pub fn decode(pred: &GridPrediction, conf_threshold: f64, nms_iou: f64) -> Vec<Detection> {
    let g = pred.geometry;
    let mut candidates = Vec::new();
    for cell in 0..g.num_cells() {
        let scores = pred.class_scores(cell);
        let (class_id, best) =
            scores.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (c, &s)| if s > acc.1 { (c, s) } else { acc });
        for b in 0..g.boxes_per_cell {
            let score = pred.box_at(cell, b).confidence * best;
            if score >= conf_threshold {
                candidates.push(Detection { class_id, score, bbox: predicted_box(pred, cell, b), cell, box_index: b });
            }
        }
    }
    sort_detections(&mut candidates);
    let mut kept: Vec<Detection> = Vec::with_capacity(candidates.len());
    for d in candidates {
        let suppressed = kept.iter().any(|k| k.class_id == d.class_id && iou(&k.bbox, &d.bbox) > nms_iou);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}
