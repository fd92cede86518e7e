use serde::{Deserialize, Serialize};

use super::ImageEval;
use crate::bbox::iou;

/// `(C+1) x (C+1)` counts, rows = ground truth, columns = prediction.
/// Index `C` is the background class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self { num_classes, counts: vec![vec![0; num_classes + 1]; num_classes + 1] }
    }

    pub fn background(&self) -> usize {
        self.num_classes
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..=self.num_classes).map(|i| self.counts[i][i]).sum()
    }

    /// `trace / total`, 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        let t = self.total();
        if t == 0 {
            0.0
        } else {
            self.trace() as f64 / t as f64
        }
    }
}

/// Class-agnostic confusion matrix. Detections scoring at least
/// `conf_threshold` are paired with truths by IoU >= `iou_threshold`, highest
/// IoU first; leftovers go to the background row or column.
pub fn confusion(images: &[ImageEval], num_classes: usize, iou_threshold: f64, conf_threshold: f64) -> ConfusionMatrix {
    let mut m = ConfusionMatrix::new(num_classes);
    let bg = m.background();
    for img in images {
        let dets: Vec<_> = img.detections.iter().filter(|d| d.score >= conf_threshold).collect();
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (di, d) in dets.iter().enumerate() {
            for (ti, t) in img.truths.iter().enumerate() {
                let v = iou(&d.bbox, &t.bbox);
                if v >= iou_threshold && v > 0.0 {
                    candidates.push((v, di, ti));
                }
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut det_used = vec![false; dets.len()];
        let mut truth_used = vec![false; img.truths.len()];
        for (_, di, ti) in candidates {
            if det_used[di] || truth_used[ti] {
                continue;
            }
            det_used[di] = true;
            truth_used[ti] = true;
            m.counts[img.truths[ti].class_id][dets[di].class_id] += 1;
        }
        for (ti, t) in img.truths.iter().enumerate() {
            if !truth_used[ti] {
                m.counts[t.class_id][bg] += 1;
            }
        }
        for (di, d) in dets.iter().enumerate() {
            if !det_used[di] {
                m.counts[bg][d.class_id] += 1;
            }
        }
    }
    m
}
