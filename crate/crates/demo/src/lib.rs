//! Browser demo: synthetic scans, box augmentation and IoU, and the PR envelope behind AP.

use fedyolo::bbox::{iou, BBox};
use fedyolo::dataio::{generate_synthetic, Augmentation, SynthSpec, CLASS_NAMES};
use fedyolo::metrics::{average_precision, pr_envelope, ApMethod, PrStep};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanObject {
    pub class_id: usize,
    pub class_name: String,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scan {
    pub width: usize,
    pub height: usize,
    /// Row-major grey levels.
    pub pixels: Vec<u8>,
    pub objects: Vec<ScanObject>,
}

/// One synthetic scan, optionally transformed. `augmentation` is empty or one
/// of rot90, rot180, rot270, fliph, flipv.
pub fn scan(seed: u64, image_size: usize, max_objects: usize, augmentation: &str) -> Result<Scan, String> {
    let spec = SynthSpec { max_objects, ..SynthSpec::new(1, image_size, seed) };
    let mut sample = generate_synthetic(&spec).map_err(|e| e.to_string())?.remove(0);
    if !augmentation.is_empty() {
        let aug = Augmentation::parse(augmentation).ok_or_else(|| format!("unknown augmentation {augmentation:?}"))?;
        sample = aug.apply(&sample);
    }
    let img = &sample.image;
    Ok(Scan {
        width: img.width,
        height: img.height,
        pixels: img.pixels.iter().map(|&v| (v * 255.0).round() as u8).collect(),
        objects: sample
            .objects
            .iter()
            .map(|o| ScanObject {
                class_id: o.class_id,
                class_name: CLASS_NAMES[o.class_id].to_string(),
                cx: o.bbox.cx,
                cy: o.bbox.cy,
                w: o.bbox.w,
                h: o.bbox.h,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct RankedDetection {
    pub score: f64,
    pub tp: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ApQuery {
    pub detections: Vec<RankedDetection>,
    pub num_truths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApAnswer {
    pub ap: Option<f64>,
    pub ap11: Option<f64>,
    pub steps: Vec<PrStep>,
}

pub fn explore_ap(q: &ApQuery) -> ApAnswer {
    let ranked: Vec<(f64, bool)> = q.detections.iter().map(|d| (d.score, d.tp)).collect();
    ApAnswer {
        ap: average_precision(&ranked, q.num_truths, ApMethod::Continuous),
        ap11: average_precision(&ranked, q.num_truths, ApMethod::ElevenPoint),
        steps: pr_envelope(&ranked, q.num_truths),
    }
}

fn to_json(v: &impl Serialize) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(|e| JsError::new(&e.to_string()))
}

/// JSON `{width, height, pixels, objects}`.
#[wasm_bindgen(js_name = syntheticScan)]
pub fn synthetic_scan(seed: u64, image_size: usize, max_objects: usize, augmentation: &str) -> Result<String, JsError> {
    to_json(&scan(seed, image_size, max_objects, augmentation).map_err(|e| JsError::new(&e))?)
}

/// IoU of two `(cx, cy, w, h)` boxes in unit coordinates.
#[wasm_bindgen(js_name = boxIou)]
pub fn box_iou(a: &[f64], b: &[f64]) -> Result<f64, JsError> {
    if a.len() != 4 || b.len() != 4 {
        return Err(JsError::new("boxes need four numbers"));
    }
    Ok(iou(&BBox::new(a[0], a[1], a[2], a[3]), &BBox::new(b[0], b[1], b[2], b[3])))
}

/// Takes `{"detections": [{"score", "tp"}], "num_truths"}` and returns JSON `{ap, ap11, steps}`.
#[wasm_bindgen(js_name = averagePrecision)]
pub fn average_precision_json(query: &str) -> Result<String, JsError> {
    let q: ApQuery = serde_json::from_str(query).map_err(|e| JsError::new(&e.to_string()))?;
    to_json(&explore_ap(&q))
}
