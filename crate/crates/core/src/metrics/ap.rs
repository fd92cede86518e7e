use serde::{Deserialize, Serialize};

use super::curves::curves;
use super::{match_detections, ImageEval};

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub const IOU_LADDER: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMethod {
    /// Area under the precision envelope.
    #[default]
    Continuous,
    /// Mean envelope precision at recall 0, 0.1, ..., 1.
    ElevenPoint,
}

/// One step of the PR curve: all detections down to some score included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrStep {
    pub score: f64,
    pub recall: f64,
    pub precision: f64,
    /// Highest precision at this recall or beyond.
    pub envelope: f64,
}

/// PR steps of a ranked list of `(score, is_true_positive)`, one per distinct
/// score, from the highest score down. Empty when there are no truths.
pub fn pr_envelope(ranked: &[(f64, bool)], num_truths: usize) -> Vec<PrStep> {
    if num_truths == 0 {
        return Vec::new();
    }
    let mut sorted = ranked.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut steps: Vec<PrStep> = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == score {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        steps.push(PrStep {
            score,
            recall: tp as f64 / num_truths as f64,
            precision: tp as f64 / (tp + fp) as f64,
            envelope: 0.0,
        });
    }
    let mut running: f64 = 0.0;
    for s in steps.iter_mut().rev() {
        running = running.max(s.precision);
        s.envelope = running;
    }
    steps
}

/// Average precision of a ranked list of `(score, is_true_positive)`.
///
/// Detections with equal scores enter the PR curve together, so the result
/// depends only on score order. `None` when there are no truths.
pub fn average_precision(ranked: &[(f64, bool)], num_truths: usize, method: ApMethod) -> Option<f64> {
    if num_truths == 0 {
        return None;
    }
    let steps = pr_envelope(ranked, num_truths);
    let ap = match method {
        ApMethod::Continuous => {
            let mut prev_r = 0.0;
            let mut area = 0.0;
            for s in &steps {
                area += (s.recall - prev_r) * s.envelope;
                prev_r = s.recall;
            }
            area
        }
        ApMethod::ElevenPoint => {
            (0..=10)
                .map(|k| {
                    let r = k as f64 / 10.0;
                    steps.iter().find(|s| s.recall >= r - 1e-12).map_or(0.0, |s| s.envelope)
                })
                .sum::<f64>()
                / 11.0
        }
    };
    Some(ap.clamp(0.0, 1.0))
}

/// AP for one class over a set of images at one IoU threshold.
pub fn class_average_precision(
    images: &[ImageEval],
    class_id: usize,
    iou_threshold: f64,
    method: ApMethod,
) -> Option<f64> {
    let mut ranked = Vec::new();
    let mut num_truths = 0;
    for img in images {
        num_truths += img.truths.iter().filter(|t| t.class_id == class_id).count();
        let m = match_detections(&img.detections, &img.truths, iou_threshold);
        let flags = m.tp_flags(img.detections.len());
        for (d, tp) in img.detections.iter().zip(flags) {
            if d.class_id == class_id {
                ranked.push((d.score, tp));
            }
        }
    }
    average_precision(&ranked, num_truths, method)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassApRow {
    pub class: String,
    /// Images containing at least one instance of the class (all images for the "all" row).
    pub images: usize,
    pub instances: usize,
    pub precision: f64,
    pub recall: f64,
    pub map50: f64,
    pub map50_95: f64,
    /// False when the class has no ground truth; such rows are left out of the "all" means.
    pub ap_defined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapTable {
    pub rows: Vec<ClassApRow>,
    pub all: ClassApRow,
    /// Confidence threshold that maximizes all-class F1; Box(P) and R are read there.
    pub best_f1_threshold: f64,
}

/// Per-class and class-mean AP table with Box(P)/R at the best-F1 threshold.
pub fn map_table(images: &[ImageEval], class_names: &[String], method: ApMethod) -> MapTable {
    let c = class_names.len();
    let sweep = curves(images, c, 0.5);
    let best = sweep
        .f1
        .all
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
        .0;
    let mut rows = Vec::with_capacity(c);
    for (class_id, name) in class_names.iter().enumerate() {
        let aps: Vec<Option<f64>> =
            IOU_LADDER.iter().map(|&t| class_average_precision(images, class_id, t, method)).collect();
        let defined = aps.iter().all(Option::is_some);
        let map50 = aps[0].unwrap_or(0.0);
        let map50_95 = aps.iter().map(|a| a.unwrap_or(0.0)).sum::<f64>() / IOU_LADDER.len() as f64;
        if !defined {
            log::warn!("class {name} has no ground truth; AP undefined and excluded from the mean");
        }
        rows.push(ClassApRow {
            class: name.clone(),
            images: images.iter().filter(|im| im.truths.iter().any(|t| t.class_id == class_id)).count(),
            instances: images.iter().map(|im| im.truths.iter().filter(|t| t.class_id == class_id).count()).sum(),
            precision: sweep.precision.per_class[class_id][best],
            recall: sweep.recall.per_class[class_id][best],
            map50,
            map50_95,
            ap_defined: defined,
        });
    }
    let defined: Vec<&ClassApRow> = rows.iter().filter(|r| r.ap_defined).collect();
    let mean = |f: fn(&ClassApRow) -> f64| {
        if defined.is_empty() {
            0.0
        } else {
            defined.iter().map(|r| f(r)).sum::<f64>() / defined.len() as f64
        }
    };
    let all = ClassApRow {
        class: "all".into(),
        images: images.len(),
        instances: rows.iter().map(|r| r.instances).sum(),
        precision: mean(|r| r.precision),
        recall: mean(|r| r.recall),
        map50: mean(|r| r.map50),
        map50_95: mean(|r| r.map50_95),
        ap_defined: !defined.is_empty(),
    };
    MapTable { rows, all, best_f1_threshold: sweep.thresholds()[best] }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bbox::BBox;
    use crate::dataio::GroundTruthObject;
    use crate::metrics::Detection;

    #[test]
    fn single_correct_detection() {
        assert_eq!(average_precision(&[(0.9, true)], 1, ApMethod::Continuous), Some(1.0));
    }

    #[test]
    fn fp_then_tp() {
        let ap = average_precision(&[(0.9, false), (0.8, true)], 1, ApMethod::Continuous).unwrap();
        assert!((ap - 0.5).abs() < 1e-15);
    }

    #[test]
    fn no_truths_is_undefined() {
        assert_eq!(average_precision(&[(0.9, false)], 0, ApMethod::Continuous), None);
    }

    #[test]
    fn eleven_point() {
        assert_eq!(average_precision(&[(0.9, true)], 1, ApMethod::ElevenPoint), Some(1.0));
        // recall tops out at 0.5 with precision 1: six of eleven points
        let ap = average_precision(&[(0.9, true)], 2, ApMethod::ElevenPoint).unwrap();
        assert!((ap - 6.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn ties_enter_together() {
        // tied TP and FP: only the joint point (r=1, p=0.5) exists
        let a = average_precision(&[(0.5, true), (0.5, false)], 1, ApMethod::Continuous).unwrap();
        let b = average_precision(&[(0.5, false), (0.5, true)], 1, ApMethod::Continuous).unwrap();
        assert_eq!(a, 0.5);
        assert_eq!(a, b);
    }

    #[test]
    fn table_with_perfect_detector() {
        let b = BBox::new(0.5, 0.5, 0.2, 0.2);
        let images: Vec<ImageEval> = (0..3)
            .map(|c| ImageEval {
                detections: vec![Detection { class_id: c, score: 0.9, bbox: b, cell: 0, box_index: 0 }],
                truths: vec![GroundTruthObject { class_id: c, bbox: b }],
            })
            .collect();
        let names: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let t = map_table(&images, &names, ApMethod::Continuous);
        assert!(!t.rows[3].ap_defined);
        assert_eq!(t.all.map50, 1.0);
        assert_eq!(t.all.map50_95, 1.0);
        assert_eq!(t.all.precision, 1.0);
        assert_eq!(t.rows[0].images, 1);
        assert_eq!(t.all.images, 3);
    }
}
