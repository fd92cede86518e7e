use super::Detection;
use crate::bbox::iou;
use crate::dataio::GroundTruthObject;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Matching {
    /// `(detection index, truth index)` in detection order.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_truths: Vec<usize>,
}

impl Matching {
    /// Per-detection true-positive flags.
    pub fn tp_flags(&self, num_detections: usize) -> Vec<bool> {
        let mut flags = vec![false; num_detections];
        for &(d, _) in &self.pairs {
            flags[d] = true;
        }
        flags
    }
}

/// Greedy evaluation matching: in the given (descending score) order, each
/// detection takes the highest-IoU unmatched truth of its own class, provided
/// that IoU is at least `iou_threshold`.
pub fn match_detections(detections: &[Detection], truths: &[GroundTruthObject], iou_threshold: f64) -> Matching {
    let mut taken = vec![false; truths.len()];
    let mut m = Matching::default();
    for (di, d) in detections.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (ti, t) in truths.iter().enumerate() {
            if taken[ti] || t.class_id != d.class_id {
                continue;
            }
            let v = iou(&d.bbox, &t.bbox);
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((ti, v));
            }
        }
        match best {
            Some((ti, _)) => {
                taken[ti] = true;
                m.pairs.push((di, ti));
            }
            None => m.unmatched_detections.push(di),
        }
    }
    m.unmatched_truths = (0..truths.len()).filter(|&t| !taken[t]).collect();
    m
}

/// `(precision, recall, F1)` with every `0/0` taken as 0.
pub fn precision_recall_f1(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bbox::BBox;

    fn det(class_id: usize, score: f64, b: BBox) -> Detection {
        Detection { class_id, score, bbox: b, cell: 0, box_index: 0 }
    }

    fn truth(class_id: usize, b: BBox) -> GroundTruthObject {
        GroundTruthObject { class_id, bbox: b }
    }

    #[test]
    fn exact_hit() {
        let b = BBox::new(0.5, 0.5, 0.2, 0.2);
        let m = match_detections(&[det(0, 0.9, b)], &[truth(0, b)], 0.5);
        assert_eq!(m.pairs, vec![(0, 0)]);
        assert!(m.unmatched_detections.is_empty() && m.unmatched_truths.is_empty());
    }

    #[test]
    fn wrong_class_is_fp_and_fn() {
        let b = BBox::new(0.5, 0.5, 0.2, 0.2);
        let m = match_detections(&[det(1, 0.9, b)], &[truth(0, b)], 0.5);
        assert!(m.pairs.is_empty());
        assert_eq!(m.unmatched_detections, vec![0]);
        assert_eq!(m.unmatched_truths, vec![0]);
    }

    #[test]
    fn duplicate_detection_is_fp() {
        let b = BBox::new(0.5, 0.5, 0.2, 0.2);
        let m = match_detections(&[det(0, 0.9, b), det(0, 0.8, b)], &[truth(0, b)], 0.5);
        assert_eq!(m.pairs, vec![(0, 0)]);
        assert_eq!(m.unmatched_detections, vec![1]);
    }

    #[test]
    fn prf() {
        let (p, r, f) = precision_recall_f1(9, 1, 0);
        assert!((p - 0.9).abs() < 1e-15 && r == 1.0);
        assert!((f - 1.8 / 1.9).abs() < 1e-15);
        assert_eq!(precision_recall_f1(0, 0, 0), (0.0, 0.0, 0.0));
        let (p, r, f) = precision_recall_f1(3, 1, 1);
        assert_eq!(p, r);
        assert!((f - p).abs() < 1e-15);
    }
}
