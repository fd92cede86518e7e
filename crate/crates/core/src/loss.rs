//! Five-term grid detection loss and its gradient.
//!
//! Terms, each summed over cells then boxes then classes in ascending order:
//!
//! * coordinate: `l_coord * sum obj_ij [(x - x^)^2 + (y - y^)^2]`
//! * size: `l_coord * sum obj_ij [(sqrt w - sqrt w^)^2 + (sqrt h - sqrt h^)^2]`
//! * object confidence: `l_obj * sum obj_ij (C - C^)^2`
//! * no-object confidence: `l_noobj * sum noobj_ij (0 - C^)^2`
//! * classification: `sum obj_i sum_c (p(c) - p^(c))^2` with one-hot `p`
//!
//! The target assignment (responsible box and confidence target) is computed
//! from the current prediction but held fixed when differentiating.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bbox::{iou, BBox};
use crate::dataio::GroundTruthObject;
use crate::model::{GridGeometry, GridPrediction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("objects {first} and {second} share grid cell {cell}")]
    SharedCell { cell: usize, first: usize, second: usize },
    #[error("object {index} has a box outside the unit square: {bbox:?}")]
    BoxOutside { index: usize, bbox: BBox },
    #[error("object {index} has class {class_id}, but the grid predicts {num_classes} classes")]
    ClassOutOfRange { index: usize, class_id: usize, num_classes: usize },
    #[error("negative size target {0}")]
    NegativeSize(f64),
    #[error("assignment geometry {assignment:?} does not match prediction {prediction:?}")]
    GeometryMismatch { assignment: GridGeometry, prediction: GridGeometry },
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_coord: f64,
    pub lambda_conf_obj: f64,
    pub lambda_conf_noobj: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_coord: 5.0, lambda_conf_obj: 1.0, lambda_conf_noobj: 0.5 }
    }
}

impl LossWeights {
    /// One shared confidence weight for both confidence terms.
    pub fn single_conf(lambda_coord: f64, lambda_conf: f64) -> Self {
        Self { lambda_coord, lambda_conf_obj: lambda_conf, lambda_conf_noobj: lambda_conf }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        for (name, v) in [
            ("lambda_coord", self.lambda_coord),
            ("lambda_conf_obj", self.lambda_conf_obj),
            ("lambda_conf_noobj", self.lambda_conf_noobj),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(LossError::InvalidWeights(format!("{name} = {v}")));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, t: f64) -> Self {
        Self {
            lambda_coord: self.lambda_coord * t,
            lambda_conf_obj: self.lambda_conf_obj * t,
            lambda_conf_noobj: self.lambda_conf_noobj * t,
        }
    }
}

/// Target for the responsible box's confidence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceTarget {
    /// IoU between the responsible predicted box and the truth.
    #[default]
    Iou,
    /// Constant 1.
    One,
}

/// Loss settings as they appear in experiment configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda_coord: f64,
    pub lambda_conf_obj: f64,
    pub lambda_conf_noobj: f64,
    pub confidence_target: ConfidenceTarget,
}

impl Default for LossConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            lambda_coord: w.lambda_coord,
            lambda_conf_obj: w.lambda_conf_obj,
            lambda_conf_noobj: w.lambda_conf_noobj,
            confidence_target: ConfidenceTarget::Iou,
        }
    }
}

impl LossConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_coord: self.lambda_coord,
            lambda_conf_obj: self.lambda_conf_obj,
            lambda_conf_noobj: self.lambda_conf_noobj,
        }
    }
}

/// One ground-truth object bound to its responsible predictor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssignedObject {
    pub cell: usize,
    pub box_index: usize,
    pub class_id: usize,
    /// Center offsets inside the cell, then width and height as image fractions.
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetAssignment {
    pub geometry: GridGeometry,
    /// Sorted by cell index.
    pub objects: Vec<AssignedObject>,
    /// `obj_ij` per `(cell, box)`, flattened as `cell * B + box`; `noobj_ij` is the complement.
    pub responsible: Vec<bool>,
}

impl TargetAssignment {
    pub fn is_obj(&self, cell: usize, b: usize) -> bool {
        self.responsible[cell * self.geometry.boxes_per_cell + b]
    }

    pub fn cell_has_object(&self, cell: usize) -> bool {
        self.objects.iter().any(|o| o.cell == cell)
    }
}

/// Absolute box predicted by `(cell, b)`.
pub fn predicted_box(pred: &GridPrediction, cell: usize, b: usize) -> BBox {
    let s = pred.geometry.grid_size;
    let (row, col) = (cell / s, cell % s);
    let p = pred.box_at(cell, b);
    BBox::new((col as f64 + p.x) / s as f64, (row as f64 + p.y) / s as f64, p.w, p.h)
}

/// Bind each truth to the highest-IoU box in its owning cell (ties go to the
/// lowest box index).
pub fn assign_targets(
    truth: &[GroundTruthObject],
    pred: &GridPrediction,
    target: ConfidenceTarget,
) -> Result<TargetAssignment, LossError> {
    let g = pred.geometry;
    let s = g.grid_size;
    let mut objects: Vec<AssignedObject> = Vec::with_capacity(truth.len());
    let mut owner: Vec<Option<usize>> = vec![None; g.num_cells()];
    for (index, t) in truth.iter().enumerate() {
        if !t.bbox.is_finite() || !t.bbox.is_inside_unit() {
            return Err(LossError::BoxOutside { index, bbox: t.bbox });
        }
        if t.class_id >= g.num_classes {
            return Err(LossError::ClassOutOfRange { index, class_id: t.class_id, num_classes: g.num_classes });
        }
        let cell = t.owning_cell(s);
        if let Some(first) = owner[cell] {
            return Err(LossError::SharedCell { cell, first, second: index });
        }
        owner[cell] = Some(index);

        let mut best = 0;
        let mut best_iou = f64::NEG_INFINITY;
        for b in 0..g.boxes_per_cell {
            let v = iou(&predicted_box(pred, cell, b), &t.bbox);
            if v > best_iou {
                best_iou = v;
                best = b;
            }
        }
        let (row, col) = (cell / s, cell % s);
        objects.push(AssignedObject {
            cell,
            box_index: best,
            class_id: t.class_id,
            x: t.bbox.cx * s as f64 - col as f64,
            y: t.bbox.cy * s as f64 - row as f64,
            w: t.bbox.w,
            h: t.bbox.h,
            confidence: match target {
                ConfidenceTarget::Iou => best_iou,
                ConfidenceTarget::One => 1.0,
            },
        });
    }
    objects.sort_by_key(|o| o.cell);
    let mut responsible = vec![false; g.num_cells() * g.boxes_per_cell];
    for o in &objects {
        responsible[o.cell * g.boxes_per_cell + o.box_index] = true;
    }
    Ok(TargetAssignment { geometry: g, objects, responsible })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub coord: f64,
    pub size: f64,
    pub conf_obj: f64,
    pub conf_noobj: f64,
    pub classification: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn finish(mut self) -> Self {
        self.total = self.coord + self.size + self.conf_obj + self.conf_noobj + self.classification;
        self
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }

    /// Term-wise sum; totals are re-derived from the summed terms.
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.coord += other.coord;
        self.size += other.size;
        self.conf_obj += other.conf_obj;
        self.conf_noobj += other.conf_noobj;
        self.classification += other.classification;
        *self = self.finish();
    }

    pub fn scaled(&self, t: f64) -> Self {
        LossBreakdown {
            coord: self.coord * t,
            size: self.size * t,
            conf_obj: self.conf_obj * t,
            conf_noobj: self.conf_noobj * t,
            classification: self.classification * t,
            total: 0.0,
        }
        .finish()
    }
}

fn check(pred: &GridPrediction, a: &TargetAssignment) -> Result<(), LossError> {
    if pred.geometry != a.geometry || pred.values.len() != a.geometry.len() {
        return Err(LossError::GeometryMismatch { assignment: a.geometry, prediction: pred.geometry });
    }
    for o in &a.objects {
        if o.w < 0.0 {
            return Err(LossError::NegativeSize(o.w));
        }
        if o.h < 0.0 {
            return Err(LossError::NegativeSize(o.h));
        }
    }
    Ok(())
}

pub fn loss(pred: &GridPrediction, a: &TargetAssignment, weights: &LossWeights) -> Result<LossBreakdown, LossError> {
    check(pred, a)?;
    let g = pred.geometry;
    let (mut coord, mut size, mut conf_obj, mut conf_noobj, mut class) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut next = a.objects.iter().peekable();
    for cell in 0..g.num_cells() {
        let obj = next.next_if(|o| o.cell == cell);
        for b in 0..g.boxes_per_cell {
            let p = pred.box_at(cell, b);
            match obj {
                Some(o) if o.box_index == b => {
                    coord += (o.x - p.x).powi(2) + (o.y - p.y).powi(2);
                    size += (o.w.sqrt() - p.w.sqrt()).powi(2) + (o.h.sqrt() - p.h.sqrt()).powi(2);
                    conf_obj += (o.confidence - p.confidence).powi(2);
                }
                _ => conf_noobj += p.confidence * p.confidence,
            }
        }
        if let Some(o) = obj {
            for (c, &score) in pred.class_scores(cell).iter().enumerate() {
                let target = if c == o.class_id { 1.0 } else { 0.0 };
                class += (target - score).powi(2);
            }
        }
    }
    Ok(LossBreakdown {
        coord: weights.lambda_coord * coord,
        size: weights.lambda_coord * size,
        conf_obj: weights.lambda_conf_obj * conf_obj,
        conf_noobj: weights.lambda_conf_noobj * conf_noobj,
        classification: class,
        total: 0.0,
    }
    .finish())
}

/// Gradient of `loss(...).total` with respect to every prediction value.
pub fn loss_grad(
    pred: &GridPrediction,
    a: &TargetAssignment,
    weights: &LossWeights,
) -> Result<GridPrediction, LossError> {
    check(pred, a)?;
    let g = pred.geometry;
    let mut grad = GridPrediction::zeros(g);
    let mut next = a.objects.iter().peekable();
    for cell in 0..g.num_cells() {
        let obj = next.next_if(|o| o.cell == cell);
        for b in 0..g.boxes_per_cell {
            let p = pred.box_at(cell, b);
            let o = g.box_offset(cell, b, 0);
            let v = &mut grad.values[o..o + 5];
            match obj {
                Some(t) if t.box_index == b => {
                    let lc = weights.lambda_coord;
                    v[0] = -2.0 * lc * (t.x - p.x);
                    v[1] = -2.0 * lc * (t.y - p.y);
                    v[2] = -lc * (t.w.sqrt() - p.w.sqrt()) / p.w.max(f64::MIN_POSITIVE).sqrt();
                    v[3] = -lc * (t.h.sqrt() - p.h.sqrt()) / p.h.max(f64::MIN_POSITIVE).sqrt();
                    v[4] = -2.0 * weights.lambda_conf_obj * (t.confidence - p.confidence);
                }
                _ => v[4] = 2.0 * weights.lambda_conf_noobj * p.confidence,
            }
        }
        if let Some(t) = obj {
            let scores: Vec<f64> = pred.class_scores(cell).to_vec();
            for (c, (gc, score)) in grad.class_scores_mut(cell).iter_mut().zip(scores).enumerate() {
                let target = if c == t.class_id { 1.0 } else { 0.0 };
                *gc = -2.0 * (target - score);
            }
        }
    }
    Ok(grad)
}
