//! Minimal dense grid detector.
//!
//! The network is `flatten -> dense(H) -> leaky ReLU(0.1) -> dense(S*S*(B*5+C)) -> sigmoid`.
//! Parameters live in one flat [`ParamVector`] laid out as
//! `[W1 (H x in, row-major) | b1 (H) | W2 (out x H, row-major) | b2 (out)]`.

use std::ops::{Add, Mul};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::GrayImage;

/// Slope of the leaky rectifier on the negative side.
pub const LEAKY_SLOPE: f64 = 0.1;

/// Values per predicted box: x, y, w, h, confidence.
pub const BOX_FIELDS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("parameter count overflows usize")]
    Overflow,
    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    DimensionMismatch { what: &'static str, expected: usize, actual: usize },
    #[error("non-finite input pixel at index {0}")]
    NonFiniteInput(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub grid_size: usize,
    pub boxes_per_cell: usize,
    pub num_classes: usize,
    pub hidden_width: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("grid_size", self.grid_size),
            ("boxes_per_cell", self.boxes_per_cell),
            ("num_classes", self.num_classes),
            ("hidden_width", self.hidden_width),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if self.input_height < self.grid_size || self.input_width < self.grid_size {
            return Err(ModelError::InvalidConfig(format!(
                "input {}x{} smaller than grid {}",
                self.input_height, self.input_width, self.grid_size
            )));
        }
        self.param_count().map(|_| ())
    }

    pub fn input_len(&self) -> Result<usize, ModelError> {
        self.input_height.checked_mul(self.input_width).ok_or(ModelError::Overflow)
    }

    /// Values predicted per grid cell (`B*5 + C`).
    pub fn cell_len(&self) -> usize {
        self.boxes_per_cell * BOX_FIELDS + self.num_classes
    }

    pub fn num_cells(&self) -> usize {
        self.grid_size * self.grid_size
    }

    pub fn output_len(&self) -> Result<usize, ModelError> {
        self.grid_size
            .checked_mul(self.grid_size)
            .and_then(|c| {
                self.boxes_per_cell
                    .checked_mul(BOX_FIELDS)
                    .and_then(|b| b.checked_add(self.num_classes))
                    .and_then(|l| c.checked_mul(l))
            })
            .ok_or(ModelError::Overflow)
    }

    /// Total parameter count `M = (in*H + H) + (H*out + out)`.
    pub fn param_count(&self) -> Result<usize, ModelError> {
        let input = self.input_len()?;
        let out = self.output_len()?;
        let h = self.hidden_width;
        let l1 = input.checked_mul(h).and_then(|v| v.checked_add(h)).ok_or(ModelError::Overflow)?;
        let l2 = h.checked_mul(out).and_then(|v| v.checked_add(out)).ok_or(ModelError::Overflow)?;
        l1.checked_add(l2).ok_or(ModelError::Overflow)
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry { grid_size: self.grid_size, boxes_per_cell: self.boxes_per_cell, num_classes: self.num_classes }
    }
}

/// Flat model parameters; the unit exchanged between clients and server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Index of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.0.iter().position(|v| !v.is_finite())
    }
}

impl Add for &ParamVector {
    type Output = ParamVector;

    fn add(self, rhs: &ParamVector) -> ParamVector {
        assert_eq!(self.len(), rhs.len(), "param vectors of different length");
        ParamVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Mul<f64> for &ParamVector {
    type Output = ParamVector;

    fn mul(self, rhs: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|a| a * rhs).collect())
    }
}

/// Shape of a grid prediction, shared by the loss and the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub grid_size: usize,
    pub boxes_per_cell: usize,
    pub num_classes: usize,
}

impl GridGeometry {
    pub fn cell_len(&self) -> usize {
        self.boxes_per_cell * BOX_FIELDS + self.num_classes
    }

    pub fn num_cells(&self) -> usize {
        self.grid_size * self.grid_size
    }

    pub fn len(&self) -> usize {
        self.num_cells() * self.cell_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat offset of field `field` (0..5) of box `b` in cell `cell`.
    pub fn box_offset(&self, cell: usize, b: usize, field: usize) -> usize {
        cell * self.cell_len() + b * BOX_FIELDS + field
    }

    pub fn class_offset(&self, cell: usize, c: usize) -> usize {
        cell * self.cell_len() + self.boxes_per_cell * BOX_FIELDS + c
    }
}

/// Raw detector output for one image.
///
/// Cells are row-major (`cell = row * S + col`). Each cell holds `B` tuples of
/// `(x, y, w, h, conf)` followed by `C` class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPrediction {
    pub geometry: GridGeometry,
    pub values: Vec<f64>,
}

/// One predicted box, read out of a [`GridPrediction`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxPrediction {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
}

impl GridPrediction {
    pub fn zeros(geometry: GridGeometry) -> Self {
        Self { geometry, values: vec![0.0; geometry.len()] }
    }

    pub fn from_values(geometry: GridGeometry, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != geometry.len() {
            return Err(ModelError::DimensionMismatch {
                what: "grid prediction",
                expected: geometry.len(),
                actual: values.len(),
            });
        }
        Ok(Self { geometry, values })
    }

    pub fn box_at(&self, cell: usize, b: usize) -> BoxPrediction {
        let o = self.geometry.box_offset(cell, b, 0);
        let v = &self.values[o..o + BOX_FIELDS];
        BoxPrediction { x: v[0], y: v[1], w: v[2], h: v[3], confidence: v[4] }
    }

    pub fn set_box(&mut self, cell: usize, b: usize, p: BoxPrediction) {
        let o = self.geometry.box_offset(cell, b, 0);
        self.values[o..o + BOX_FIELDS].copy_from_slice(&[p.x, p.y, p.w, p.h, p.confidence]);
    }

    pub fn class_scores(&self, cell: usize) -> &[f64] {
        let o = self.geometry.class_offset(cell, 0);
        &self.values[o..o + self.geometry.num_classes]
    }

    pub fn class_scores_mut(&mut self, cell: usize) -> &mut [f64] {
        let o = self.geometry.class_offset(cell, 0);
        let c = self.geometry.num_classes;
        &mut self.values[o..o + c]
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn leaky(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAKY_SLOPE * z
    }
}

#[inline]
fn leaky_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// The detector: a validated [`ModelConfig`] plus cached layer offsets.
/// Output of [`Detector::forward_pass`]: the prediction plus the activations
/// the backward pass needs.
pub struct ForwardPass {
    pub prediction: GridPrediction,
    act: Activations,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detector {
    config: ModelConfig,
    input: usize,
    hidden: usize,
    output: usize,
    param_count: usize,
}

struct Activations {
    pre_hidden: Vec<f64>,
    hidden: Vec<f64>,
    output: Vec<f64>,
}

impl Detector {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(Self {
            config,
            input: config.input_len()?,
            hidden: config.hidden_width,
            output: config.output_len()?,
            param_count: config.param_count()?,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn geometry(&self) -> GridGeometry {
        self.config.geometry()
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    fn w1(&self) -> std::ops::Range<usize> {
        0..self.input * self.hidden
    }

    fn b1(&self) -> std::ops::Range<usize> {
        let s = self.input * self.hidden;
        s..s + self.hidden
    }

    fn w2(&self) -> std::ops::Range<usize> {
        let s = self.input * self.hidden + self.hidden;
        s..s + self.hidden * self.output
    }

    fn b2(&self) -> std::ops::Range<usize> {
        let s = self.input * self.hidden + self.hidden + self.hidden * self.output;
        s..s + self.output
    }

    /// Glorot-uniform weights, zero biases, drawn from a ChaCha8 stream seeded
    /// with `config.seed`.
    pub fn init_params(&self) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut p = vec![0.0; self.param_count];
        let a1 = (6.0 / (self.input + self.hidden) as f64).sqrt();
        for v in &mut p[self.w1()] {
            *v = rng.random_range(-a1..=a1);
        }
        let a2 = (6.0 / (self.hidden + self.output) as f64).sqrt();
        for v in &mut p[self.w2()] {
            *v = rng.random_range(-a2..=a2);
        }
        ParamVector(p)
    }

    fn check_params(&self, params: &ParamVector) -> Result<(), ModelError> {
        if params.len() != self.param_count {
            return Err(ModelError::DimensionMismatch {
                what: "parameter vector",
                expected: self.param_count,
                actual: params.len(),
            });
        }
        Ok(())
    }

    fn check_image(&self, image: &GrayImage) -> Result<(), ModelError> {
        if image.height != self.config.input_height || image.width != self.config.input_width {
            return Err(ModelError::DimensionMismatch {
                what: "image pixels",
                expected: self.input,
                actual: image.height * image.width,
            });
        }
        if let Some(i) = image.pixels.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteInput(i));
        }
        Ok(())
    }

    fn activations(&self, params: &ParamVector, x: &[f64]) -> Activations {
        let p = params.as_slice();
        let w1 = &p[self.w1()];
        let b1 = &p[self.b1()];
        let pre_hidden: Vec<f64> = w1.chunks_exact(self.input).zip(b1).map(|(row, b)| b + dot(row, x)).collect();
        let hidden: Vec<f64> = pre_hidden.iter().map(|&z| leaky(z)).collect();
        let w2 = &p[self.w2()];
        let b2 = &p[self.b2()];
        let output = w2.chunks_exact(self.hidden).zip(b2).map(|(row, b)| sigmoid(b + dot(row, &hidden))).collect();
        Activations { pre_hidden, hidden, output }
    }

    pub fn forward(&self, params: &ParamVector, image: &GrayImage) -> Result<GridPrediction, ModelError> {
        self.check_params(params)?;
        self.check_image(image)?;
        let act = self.activations(params, &image.pixels);
        Ok(GridPrediction { geometry: self.geometry(), values: act.output })
    }

    /// Gradient of `<upstream, forward(params, image)>` with respect to `params`.
    pub fn backward(
        &self,
        params: &ParamVector,
        image: &GrayImage,
        upstream: &GridPrediction,
    ) -> Result<ParamVector, ModelError> {
        let mut grad = ParamVector::zeros(self.param_count);
        self.backward_into(params, image, upstream, &mut grad)?;
        Ok(grad)
    }

    /// Like [`Detector::backward`] but adds the gradient into `acc`.
    pub fn backward_into(
        &self,
        params: &ParamVector,
        image: &GrayImage,
        upstream: &GridPrediction,
        acc: &mut ParamVector,
    ) -> Result<(), ModelError> {
        self.check_params(params)?;
        self.check_image(image)?;
        self.check_params(acc)?;
        if upstream.values.len() != self.output {
            return Err(ModelError::DimensionMismatch {
                what: "upstream gradient",
                expected: self.output,
                actual: upstream.values.len(),
            });
        }
        let act = self.activations(params, &image.pixels);
        self.accumulate(params, &image.pixels, &act, &upstream.values, &mut acc.0);
        Ok(())
    }

    /// Forward pass that keeps the intermediate activations, so a caller can
    /// compute a loss gradient and then call [`Detector::backward_from`]
    /// without a second forward pass.
    pub fn forward_pass(&self, params: &ParamVector, image: &GrayImage) -> Result<ForwardPass, ModelError> {
        self.check_params(params)?;
        self.check_image(image)?;
        let act = self.activations(params, &image.pixels);
        Ok(ForwardPass { prediction: GridPrediction { geometry: self.geometry(), values: act.output.clone() }, act })
    }

    pub fn backward_from(
        &self,
        params: &ParamVector,
        image: &GrayImage,
        pass: &ForwardPass,
        upstream: &GridPrediction,
        acc: &mut ParamVector,
    ) -> Result<(), ModelError> {
        self.check_params(acc)?;
        if upstream.values.len() != self.output {
            return Err(ModelError::DimensionMismatch {
                what: "upstream gradient",
                expected: self.output,
                actual: upstream.values.len(),
            });
        }
        self.accumulate(params, &image.pixels, &pass.act, &upstream.values, &mut acc.0);
        Ok(())
    }

    fn accumulate(&self, params: &ParamVector, x: &[f64], act: &Activations, upstream: &[f64], acc: &mut [f64]) {
        let p = params.as_slice();
        let d_out: Vec<f64> = upstream.iter().zip(&act.output).map(|(g, o)| g * o * (1.0 - o)).collect();

        let w2 = &p[self.w2()];
        let mut d_hidden = vec![0.0; self.hidden];
        {
            let (gw2, gb2) = acc[self.w2().start..].split_at_mut(self.hidden * self.output);
            for (o, &d) in d_out.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &w2[o * self.hidden..(o + 1) * self.hidden];
                let grow = &mut gw2[o * self.hidden..(o + 1) * self.hidden];
                for ((g, &h), (dh, &w)) in grow.iter_mut().zip(&act.hidden).zip(d_hidden.iter_mut().zip(row)) {
                    *g += d * h;
                    *dh += d * w;
                }
                gb2[o] += d;
            }
        }

        let (gw1, rest) = acc.split_at_mut(self.input * self.hidden);
        let gb1 = &mut rest[..self.hidden];
        for (j, (&dh, &z)) in d_hidden.iter().zip(&act.pre_hidden).enumerate() {
            let d = dh * leaky_grad(z);
            if d == 0.0 {
                continue;
            }
            gb1[j] += d;
            for (g, &xi) in gw1[j * self.input..(j + 1) * self.input].iter_mut().zip(x) {
                *g += d * xi;
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
