use serde::{Deserialize, Serialize};

use super::{match_detections, precision_recall_f1, Detection, ImageEval};

/// Thresholds 0.00, 0.01, ..., 1.00.
pub const THRESHOLD_STEPS: usize = 101;

fn threshold(k: usize) -> f64 {
    k as f64 / (THRESHOLD_STEPS - 1) as f64
}

/// One metric swept over confidence thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub thresholds: Vec<f64>,
    /// `per_class[c][k]` is the value for class `c` at `thresholds[k]`.
    pub per_class: Vec<Vec<f64>>,
    /// Micro-averaged over pooled counts.
    pub all: Vec<f64>,
}

/// PR points from the full ranked list, one per distinct score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// `(recall, precision)` per class.
    pub per_class: Vec<Vec<(f64, f64)>>,
}

impl PrCurve {
    /// Envelope precision at `recall` for class `c`: the best precision at
    /// any recall >= `recall`, or 0 if that recall is never reached.
    pub fn envelope_at(&self, c: usize, recall: f64) -> f64 {
        self.per_class[c].iter().filter(|(r, _)| *r >= recall - 1e-12).map(|(_, p)| *p).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    pub precision: CurveSeries,
    pub recall: CurveSeries,
    pub f1: CurveSeries,
    pub pr: PrCurve,
}

impl Curves {
    pub fn thresholds(&self) -> &[f64] {
        &self.precision.thresholds
    }
}

fn counts_at(images: &[ImageEval], num_classes: usize, t: f64, iou_threshold: f64) -> Vec<(usize, usize, usize)> {
    let mut counts = vec![(0usize, 0usize, 0usize); num_classes];
    for img in images {
        let kept: Vec<Detection> = img.detections.iter().filter(|d| d.score >= t).copied().collect();
        let m = match_detections(&kept, &img.truths, iou_threshold);
        for &(d, _) in &m.pairs {
            counts[kept[d].class_id].0 += 1;
        }
        for &d in &m.unmatched_detections {
            counts[kept[d].class_id].1 += 1;
        }
        for &t in &m.unmatched_truths {
            counts[img.truths[t].class_id].2 += 1;
        }
    }
    counts
}

/// P, R and F1 against confidence, plus the PR curve.
pub fn curves(images: &[ImageEval], num_classes: usize, iou_threshold: f64) -> Curves {
    let thresholds: Vec<f64> = (0..THRESHOLD_STEPS).map(threshold).collect();
    let empty = || CurveSeries {
        thresholds: thresholds.clone(),
        per_class: vec![vec![0.0; THRESHOLD_STEPS]; num_classes],
        all: vec![0.0; THRESHOLD_STEPS],
    };
    let (mut p, mut r, mut f) = (empty(), empty(), empty());
    for (k, &t) in thresholds.iter().enumerate() {
        let counts = counts_at(images, num_classes, t, iou_threshold);
        for (c, &(tp, fp, fn_)) in counts.iter().enumerate() {
            let (pc, rc, fc) = precision_recall_f1(tp, fp, fn_);
            p.per_class[c][k] = pc;
            r.per_class[c][k] = rc;
            f.per_class[c][k] = fc;
        }
        let pooled = counts.iter().fold((0, 0, 0), |a, &(tp, fp, fn_)| (a.0 + tp, a.1 + fp, a.2 + fn_));
        let (pa, ra, fa) = precision_recall_f1(pooled.0, pooled.1, pooled.2);
        p.all[k] = pa;
        r.all[k] = ra;
        f.all[k] = fa;
    }

    let mut pr = PrCurve { per_class: vec![Vec::new(); num_classes] };
    for (c, points) in pr.per_class.iter_mut().enumerate() {
        let mut ranked = Vec::new();
        let mut truths = 0;
        for img in images {
            truths += img.truths.iter().filter(|t| t.class_id == c).count();
            let m = match_detections(&img.detections, &img.truths, iou_threshold);
            let flags = m.tp_flags(img.detections.len());
            ranked
                .extend(img.detections.iter().zip(flags).filter(|(d, _)| d.class_id == c).map(|(d, tp)| (d.score, tp)));
        }
        if truths == 0 {
            continue;
        }
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut i = 0;
        while i < ranked.len() {
            let s = ranked[i].0;
            while i < ranked.len() && ranked[i].0 == s {
                if ranked[i].1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
                i += 1;
            }
            points.push((tp as f64 / truths as f64, tp as f64 / (tp + fp) as f64));
        }
    }
    Curves { precision: p, recall: r, f1: f, pr }
}
