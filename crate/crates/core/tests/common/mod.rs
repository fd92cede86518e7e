#![allow(dead_code)]

use fedyolo::bbox::BBox;
use fedyolo::dataio::{GrayImage, GroundTruthObject};
use fedyolo::loss::ConfidenceTarget;
use fedyolo::model::{Detector, ModelConfig, ParamVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// At most one object per cell, every box inside the unit square.
pub fn random_truths(rng: &mut ChaCha8Rng, s: usize, c: usize, p_object: f64) -> Vec<GroundTruthObject> {
    let mut out = Vec::new();
    for cell in 0..s * s {
        if !rng.random_bool(p_object) {
            continue;
        }
        let (row, col) = (cell / s, cell % s);
        let cx = (col as f64 + rng.random_range(0.05..0.95)) / s as f64;
        let cy = (row as f64 + rng.random_range(0.05..0.95)) / s as f64;
        let max_w = 2.0 * cx.min(1.0 - cx);
        let max_h = 2.0 * cy.min(1.0 - cy);
        let w = rng.random_range(0.02..1.0) * max_w;
        let h = rng.random_range(0.02..1.0) * max_h;
        out.push(GroundTruthObject { class_id: rng.random_range(0..c), bbox: BBox::new(cx, cy, w, h) });
    }
    out
}

pub struct Instance {
    pub model: Detector,
    pub params: ParamVector,
    pub image: GrayImage,
    pub truths: Vec<GroundTruthObject>,
    pub target: ConfidenceTarget,
}

/// Small random model + image + truths: inputs up to 8x8, S <= 2, B <= 2, C <= 3.
pub fn small_instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let cfg = ModelConfig {
        input_height: r.random_range(2..=8),
        input_width: r.random_range(2..=8),
        grid_size: r.random_range(1..=2),
        boxes_per_cell: r.random_range(1..=2),
        num_classes: r.random_range(1..=3),
        hidden_width: r.random_range(1..=6),
        seed,
    };
    let model = Detector::new(cfg).unwrap();
    let mut params = model.init_params();
    for p in params.0.iter_mut() {
        *p += r.random_range(-0.3..0.3);
    }
    let n = cfg.input_height * cfg.input_width;
    let image = GrayImage::new(cfg.input_height, cfg.input_width, (0..n).map(|_| r.random()).collect()).unwrap();
    let truths = random_truths(&mut r, cfg.grid_size, cfg.num_classes, 0.6);
    let target = if r.random_bool(0.5) { ConfidenceTarget::Iou } else { ConfidenceTarget::One };
    Instance { model, params, image, truths, target }
}

pub fn boxes4(b: &BBox) -> [f64; 4] {
    [b.cx, b.cy, b.w, b.h]
}
