//! Synthetic brain-scan-like images with tumor blobs.
//!
//! Each image is a dark noisy background, an elliptical skull band around a
//! gray brain region, and one bright blob per object. The blob shape depends
//! on the class:
//!
//! * class 0: large, irregular outline, soft Gaussian falloff
//! * class 1: compact disc with a sharp edge and high contrast
//! * class 2: small Gaussian blob constrained near the center-bottom
//!
//! Every blob's intensity drops to half its peak exactly on its outline
//! curve, and the ground-truth box is the extent of that curve.

use std::f64::consts::{LN_2, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::augment::snap_box;
use super::{DataError, GrayImage, GroundTruthObject, Sample};
use crate::bbox::BBox;
use crate::seed::derive_seed;

pub const CLASS_NAMES: [&str; 3] = ["glioma", "meningioma", "pituitary"];

const OUTLINE_SAMPLES: usize = 2048;
const PLACEMENT_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub count: usize,
    pub image_size: usize,
    /// Class proportions; must have three entries summing to 1.
    #[serde(default = "default_mix")]
    pub class_mix: Vec<f64>,
    /// Objects per image are drawn uniformly from `1..=max_objects`; an extra
    /// object that finds no free grid cell is left out.
    #[serde(default = "default_max_objects")]
    pub max_objects: usize,
    /// Grid used for the one-object-per-cell rule.
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_mix() -> Vec<f64> {
    vec![1.0 / 3.0; 3]
}

fn default_max_objects() -> usize {
    1
}

fn default_grid() -> usize {
    4
}

impl SynthSpec {
    pub fn new(count: usize, image_size: usize, seed: u64) -> Self {
        Self {
            count,
            image_size,
            class_mix: default_mix(),
            max_objects: default_max_objects(),
            grid_size: default_grid(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.count == 0 {
            return Err(DataError::Generation("count must be >= 1".into()));
        }
        if self.class_mix.len() != CLASS_NAMES.len() {
            return Err(DataError::Generation(format!("class_mix needs {} entries", CLASS_NAMES.len())));
        }
        if self.class_mix.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(DataError::Generation("class_mix entries must be >= 0".into()));
        }
        let total: f64 = self.class_mix.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(DataError::Generation(format!("class_mix sums to {total}, expected 1")));
        }
        if self.max_objects == 0 {
            return Err(DataError::Generation("max_objects must be >= 1".into()));
        }
        if self.grid_size == 0 || self.max_objects > self.grid_size * self.grid_size {
            return Err(DataError::Generation(format!(
                "{} objects cannot occupy distinct cells of a {}x{} grid",
                self.max_objects, self.grid_size, self.grid_size
            )));
        }
        if self.image_size < 16 || self.image_size < self.grid_size {
            return Err(DataError::Generation(format!("image size {} too small to place blobs", self.image_size)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Falloff {
    Gaussian,
    /// `1 / (1 + q^8)`: flat top with a sharp edge.
    Plateau,
}

impl Falloff {
    /// Profile as a function of normalized radius `q`; equals 0.5 at `q = 1`.
    fn at(self, q: f64) -> f64 {
        match self {
            Falloff::Gaussian => (-LN_2 * q * q).exp(),
            Falloff::Plateau => 1.0 / (1.0 + q.powi(8)),
        }
    }
}

#[derive(Debug, Clone)]
struct Blob {
    class_id: usize,
    cx: f64,
    cy: f64,
    /// Axis scales of the outline.
    ax: f64,
    ay: f64,
    radius: f64,
    /// `(amplitude, frequency, phase)` harmonics of the outline.
    wobble: Vec<(f64, f64, f64)>,
    peak: f64,
    falloff: Falloff,
}

impl Blob {
    fn outline_radius(&self, theta: f64) -> f64 {
        let m: f64 = self.wobble.iter().map(|(a, k, phi)| a * (k * theta + phi).sin()).sum();
        self.radius * (1.0 + m)
    }

    fn intensity(&self, x: f64, y: f64) -> f64 {
        let u = (x - self.cx) / self.ax;
        let v = (y - self.cy) / self.ay;
        let rho = (u * u + v * v).sqrt();
        if rho == 0.0 {
            return self.peak;
        }
        let q = rho / self.outline_radius(v.atan2(u));
        self.peak * self.falloff.at(q)
    }

    /// Extent of the half-peak outline.
    fn bbox(&self) -> BBox {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for i in 0..OUTLINE_SAMPLES {
            let t = TAU * i as f64 / OUTLINE_SAMPLES as f64;
            let r = self.outline_radius(t);
            let x = self.cx + r * self.ax * t.cos();
            let y = self.cy + r * self.ay * t.sin();
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        BBox::from_corners(x0, y0, x1, y1)
    }

    fn random(class_id: usize, rng: &mut ChaCha8Rng) -> Self {
        let aspect = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
            let a: f64 = rng.random_range(lo..hi);
            (a.sqrt(), 1.0 / a.sqrt())
        };
        match class_id {
            0 => {
                let (ax, ay) = aspect(rng, 0.8, 1.25);
                Blob {
                    class_id,
                    cx: rng.random_range(0.25..0.75),
                    cy: rng.random_range(0.25..0.75),
                    ax,
                    ay,
                    radius: rng.random_range(0.10..0.14),
                    wobble: vec![(0.16, 3.0, rng.random_range(0.0..TAU)), (0.07, 5.0, rng.random_range(0.0..TAU))],
                    peak: 0.45,
                    falloff: Falloff::Gaussian,
                }
            }
            1 => {
                let (ax, ay) = aspect(rng, 0.9, 1.1);
                Blob {
                    class_id,
                    cx: rng.random_range(0.25..0.75),
                    cy: rng.random_range(0.25..0.75),
                    ax,
                    ay,
                    radius: rng.random_range(0.08..0.11),
                    wobble: Vec::new(),
                    peak: 0.75,
                    falloff: Falloff::Plateau,
                }
            }
            _ => {
                let (ax, ay) = aspect(rng, 0.8, 1.2);
                Blob {
                    class_id,
                    cx: rng.random_range(0.42..0.58),
                    cy: rng.random_range(0.62..0.72),
                    ax,
                    ay,
                    radius: rng.random_range(0.065..0.085),
                    wobble: Vec::new(),
                    peak: 0.6,
                    falloff: Falloff::Gaussian,
                }
            }
        }
    }
}

fn draw_class(mix: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (c, p) in mix.iter().enumerate() {
        acc += p;
        if u < acc {
            return c;
        }
    }
    // u landed in the rounding gap at the top; take the last class with mass
    mix.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

fn render_background(size: usize, rng: &mut ChaCha8Rng) -> GrayImage {
    let noise = Normal::new(0.0, 0.015).expect("valid sigma");
    let phase: (f64, f64) = (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
    let (rx, ry) = (rng.random_range(0.40..0.43), rng.random_range(0.43..0.46));
    let mut img = GrayImage::filled(size, size, 0.0);
    let n = size as f64;
    for row in 0..size {
        for col in 0..size {
            let x = (col as f64 + 0.5) / n;
            let y = (row as f64 + 0.5) / n;
            let e = (((x - 0.5) / rx).powi(2) + ((y - 0.5) / ry).powi(2)).sqrt();
            let base = if e < 1.0 {
                0.2 + 0.02 * (2.0 * PI * 3.0 * x + phase.0).sin() * (2.0 * PI * 2.0 * y + phase.1).cos()
            } else if e < 1.1 {
                0.55
            } else {
                0.04
            };
            img.set(row, col, base + noise.sample(rng));
        }
    }
    img
}

fn generate_one(spec: &SynthSpec, index: usize) -> Result<Sample, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[index as u64]));
    let n_objects = rng.random_range(1..=spec.max_objects);
    let mut blobs: Vec<Blob> = Vec::with_capacity(n_objects);
    let mut objects = Vec::with_capacity(n_objects);
    let mut cells = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        let class_id = draw_class(&spec.class_mix, &mut rng);
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let blob = Blob::random(class_id, &mut rng);
            let obj = GroundTruthObject { class_id, bbox: snap_box(blob.bbox()) };
            let cell = obj.owning_cell(spec.grid_size);
            if !obj.bbox.is_inside_unit() || cells.contains(&cell) {
                continue;
            }
            cells.push(cell);
            objects.push(obj);
            blobs.push(blob);
            placed = true;
            break;
        }
        if !placed && !objects.is_empty() {
            log::debug!("sample {index}: skipped a class-{class_id} blob with no free cell");
        } else if !placed {
            return Err(DataError::Generation(format!(
                "could not place a class-{class_id} blob in sample {index} \
                 with one object per cell of a {0}x{0} grid",
                spec.grid_size
            )));
        }
    }

    let mut image = render_background(spec.image_size, &mut rng);
    let n = spec.image_size as f64;
    for row in 0..spec.image_size {
        for col in 0..spec.image_size {
            let x = (col as f64 + 0.5) / n;
            let y = (row as f64 + 0.5) / n;
            let add: f64 = blobs.iter().map(|b| b.intensity(x, y)).sum();
            let v = (image.get(row, col) + add).clamp(0.0, 1.0);
            // 8-bit levels, so a P5 round trip is lossless
            image.set(row, col, (v * 255.0).round() / 255.0);
        }
    }
    debug_assert!(blobs.iter().zip(&objects).all(|(b, o)| b.class_id == o.class_id));
    Ok(Sample { image, objects })
}

/// Deterministic for a given spec; sample `i` depends only on `(seed, i)`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<Sample>, DataError> {
    spec.validate()?;
    (0..spec.count).map(|i| generate_one(spec, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_histogram_close_to_uniform() {
        let spec = SynthSpec::new(100, 32, 11);
        let samples = generate_synthetic(&spec).unwrap();
        let mut hist = [0usize; 3];
        for s in &samples {
            hist[s.objects[0].class_id] += 1;
        }
        for h in hist {
            assert!((h as f64 - 100.0 / 3.0).abs() <= 10.0, "{hist:?}");
        }
    }

    #[test]
    fn deterministic_and_valid() {
        let mut spec = SynthSpec::new(12, 48, 5);
        spec.max_objects = 3;
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        for s in &a {
            s.validate(3, spec.grid_size).unwrap();
            assert!(s.objects.iter().all(|o| o.bbox.is_inside_unit()));
            assert!(s.image.pixels.iter().all(|p| (p * 255.0).fract() == 0.0));
        }
    }

    #[test]
    fn outline_is_the_half_peak_contour() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for class_id in 0..3 {
            let blob = Blob::random(class_id, &mut rng);
            for i in 0..16 {
                let t = TAU * i as f64 / 16.0;
                let r = blob.outline_radius(t);
                let x = blob.cx + r * blob.ax * t.cos();
                let y = blob.cy + r * blob.ay * t.sin();
                assert!((blob.intensity(x, y) - 0.5 * blob.peak).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pituitary_sits_center_bottom() {
        let mut spec = SynthSpec::new(20, 32, 2);
        spec.class_mix = vec![0.0, 0.0, 1.0];
        for s in generate_synthetic(&spec).unwrap() {
            let b = s.objects[0].bbox;
            assert!(b.cy > 0.55 && (b.cx - 0.5).abs() < 0.1);
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = SynthSpec::new(5, 8, 0);
        assert!(generate_synthetic(&spec).is_err());
        spec.image_size = 32;
        spec.class_mix = vec![0.5, 0.5, 0.5];
        assert!(generate_synthetic(&spec).is_err());
        spec.class_mix = default_mix();
        spec.grid_size = 1;
        spec.max_objects = 2;
        assert!(generate_synthetic(&spec).is_err());
    }
}
