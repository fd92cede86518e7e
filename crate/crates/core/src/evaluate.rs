//! Evaluate a parameter vector on a labelled sample set.

use serde::{Deserialize, Serialize};

use crate::dataio::Sample;
use crate::loss::LossConfig;
use crate::metrics::{confusion, curves, decode, map_table, ApMethod, ConfusionMatrix, Curves, ImageEval, MapTable};
use crate::model::{Detector, ModelError, ParamVector};
use crate::trainer::{evaluate_loss, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Score floor applied while decoding, before any metric.
    pub decode_threshold: f64,
    pub nms_iou: f64,
    /// IoU threshold for the P/R/F1 sweeps.
    pub curve_iou: f64,
    pub confusion_iou: f64,
    pub confusion_conf: f64,
    pub ap_method: ApMethod,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            decode_threshold: 0.001,
            nms_iou: 0.45,
            curve_iou: 0.5,
            confusion_iou: 0.45,
            confusion_conf: 0.25,
            ap_method: ApMethod::Continuous,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub table: MapTable,
    pub confusion: ConfusionMatrix,
    pub curves: Curves,
    pub mean_loss: f64,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        self.confusion.accuracy()
    }
}

pub fn predict_all(
    model: &Detector,
    params: &ParamVector,
    samples: &[Sample],
    cfg: &EvalConfig,
) -> Result<Vec<ImageEval>, ModelError> {
    samples
        .iter()
        .map(|s| {
            let pred = model.forward(params, &s.image)?;
            Ok(ImageEval { detections: decode(&pred, cfg.decode_threshold, cfg.nms_iou), truths: s.objects.clone() })
        })
        .collect()
}

pub fn evaluate(
    model: &Detector,
    params: &ParamVector,
    samples: &[Sample],
    class_names: &[String],
    loss_cfg: &LossConfig,
    cfg: &EvalConfig,
) -> Result<Evaluation, TrainError> {
    let images = predict_all(model, params, samples, cfg)?;
    let c = class_names.len();
    Ok(Evaluation {
        table: map_table(&images, class_names, cfg.ap_method),
        confusion: confusion(&images, c, cfg.confusion_iou, cfg.confusion_conf),
        curves: curves(&images, c, cfg.curve_iou),
        mean_loss: evaluate_loss(model, params, samples, loss_cfg)?.total,
    })
}
