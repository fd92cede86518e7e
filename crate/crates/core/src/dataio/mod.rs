//! Samples, synthetic generation, the P5 + label directory format,
//! preprocessing, train/test split and client partitioning.

mod augment;
mod pgm;
mod split;
mod synth;

pub use augment::{preprocess, resize_nearest, Augmentation};
pub use pgm::{load_directory, read_pgm, write_directory, write_pgm};
pub use split::{materialize, partition, partition_manifest, split_train_test, PartitionMode, PartitionSpec};
pub use synth::{generate_synthetic, SynthSpec, CLASS_NAMES};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bbox::BBox;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid object: {0}")]
    InvalidObject(String),
    #[error("{file}:{line}: {msg}")]
    Label { file: String, line: usize, msg: String },
    #[error("{0}")]
    Generation(String),
    #[error("{0}")]
    Split(String),
    #[error("partition: {0}")]
    Partition(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Row-major grayscale image with pixel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self, DataError> {
        if height == 0 || width == 0 {
            return Err(DataError::InvalidImage("empty image".into()));
        }
        if pixels.len() != height * width {
            return Err(DataError::InvalidImage(format!("{} pixels for a {height}x{width} image", pixels.len())));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self { height, width, pixels: vec![value; height * width] }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.pixels[row * self.width + col] = v;
    }

    pub fn in_unit_range(&self) -> bool {
        self.pixels.iter().all(|p| (0.0..=1.0).contains(p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub class_id: usize,
    pub bbox: BBox,
}

impl GroundTruthObject {
    pub fn validate(&self, num_classes: usize) -> Result<(), DataError> {
        if self.class_id >= num_classes {
            return Err(DataError::InvalidObject(format!("class {} out of range (C = {num_classes})", self.class_id)));
        }
        if !self.bbox.is_finite() || !self.bbox.is_inside_unit() {
            return Err(DataError::InvalidObject(format!("box {:?} not inside the image", self.bbox)));
        }
        Ok(())
    }

    /// Row-major index of the grid cell containing the box center.
    pub fn owning_cell(&self, grid_size: usize) -> usize {
        let s = grid_size as f64;
        let col = ((self.bbox.cx * s).floor() as usize).min(grid_size - 1);
        let row = ((self.bbox.cy * s).floor() as usize).min(grid_size - 1);
        row * grid_size + col
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: GrayImage,
    pub objects: Vec<GroundTruthObject>,
}

impl Sample {
    /// Checks pixel range, box validity and the one-object-per-cell rule.
    pub fn validate(&self, num_classes: usize, grid_size: usize) -> Result<(), DataError> {
        if !self.image.in_unit_range() {
            return Err(DataError::InvalidImage("pixel outside [0, 1]".into()));
        }
        let mut cells = Vec::with_capacity(self.objects.len());
        for o in &self.objects {
            o.validate(num_classes)?;
            let cell = o.owning_cell(grid_size);
            if cells.contains(&cell) {
                return Err(DataError::InvalidObject(format!("two objects share grid cell {cell}")));
            }
            cells.push(cell);
        }
        Ok(())
    }

    /// Stratification key: class of the first object, `None` for empty samples.
    pub fn primary_class(&self) -> Option<usize> {
        self.objects.first().map(|o| o.class_id)
    }
}
