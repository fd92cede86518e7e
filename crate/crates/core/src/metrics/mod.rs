//! Detection evaluation: decoding grid predictions, greedy matching,
//! precision/recall/F1 sweeps, average precision, mAP tables and the
//! detection confusion matrix.

mod ap;
mod confusion;
mod curves;
mod decode;
mod export;
mod matching;

pub use ap::{
    average_precision, class_average_precision, map_table, pr_envelope, ApMethod, ClassApRow, MapTable, PrStep,
    IOU_LADDER,
};
pub use confusion::{confusion, ConfusionMatrix};
pub use curves::{curves, CurveSeries, Curves, PrCurve, THRESHOLD_STEPS};
pub use decode::decode;
pub use export::{ap_table_csv, ap_table_text, confusion_csv, curve_csv, pr_curve_csv};
pub use matching::{match_detections, precision_recall_f1, Matching};

pub use crate::bbox::iou;

use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::dataio::GroundTruthObject;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: usize,
    pub score: f64,
    pub bbox: BBox,
    /// Source `(cell, box)`; used to break score ties deterministically.
    pub cell: usize,
    pub box_index: usize,
}

/// Detections and ground truth for one image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageEval {
    pub detections: Vec<Detection>,
    pub truths: Vec<GroundTruthObject>,
}

/// Sort by descending score, then ascending `(cell, box)`.
pub fn sort_detections(dets: &mut [Detection]) {
    dets.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.cell.cmp(&b.cell)).then(a.box_index.cmp(&b.box_index)));
}
