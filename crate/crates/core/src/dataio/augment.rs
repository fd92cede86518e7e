use serde::{Deserialize, Serialize};

use super::{GrayImage, GroundTruthObject, Sample};
use crate::bbox::BBox;

/// Box coordinates are snapped to multiples of this step. On that dyadic grid
/// `1 - x` is exact in f64, so flips and rotations compose to the identity
/// bit for bit.
const SNAP: f64 = (1u64 << 40) as f64;

pub(crate) fn snap(v: f64) -> f64 {
    (v * SNAP).round() / SNAP
}

pub(crate) fn snap_box(b: BBox) -> BBox {
    BBox::new(snap(b.cx), snap(b.cy), snap(b.w), snap(b.h))
}

/// Rotations are clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Augmentation {
    Rot90,
    Rot180,
    Rot270,
    FlipH,
    FlipV,
}

impl Augmentation {
    pub const ALL: [Augmentation; 5] =
        [Augmentation::Rot90, Augmentation::Rot180, Augmentation::Rot270, Augmentation::FlipH, Augmentation::FlipV];

    pub fn name(self) -> &'static str {
        match self {
            Augmentation::Rot90 => "rot90",
            Augmentation::Rot180 => "rot180",
            Augmentation::Rot270 => "rot270",
            Augmentation::FlipH => "fliph",
            Augmentation::FlipV => "flipv",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    pub fn apply_box(self, b: BBox) -> BBox {
        let BBox { cx, cy, w, h } = b;
        match self {
            Augmentation::FlipH => BBox::new(1.0 - cx, cy, w, h),
            Augmentation::FlipV => BBox::new(cx, 1.0 - cy, w, h),
            Augmentation::Rot90 => BBox::new(1.0 - cy, cx, h, w),
            Augmentation::Rot180 => BBox::new(1.0 - cx, 1.0 - cy, w, h),
            Augmentation::Rot270 => BBox::new(cy, 1.0 - cx, h, w),
        }
    }

    pub fn apply_image(self, img: &GrayImage) -> GrayImage {
        let (h, w) = (img.height, img.width);
        match self {
            Augmentation::FlipH => remap(img, h, w, |r, c| img.get(r, w - 1 - c)),
            Augmentation::FlipV => remap(img, h, w, |r, c| img.get(h - 1 - r, c)),
            Augmentation::Rot180 => remap(img, h, w, |r, c| img.get(h - 1 - r, w - 1 - c)),
            Augmentation::Rot90 => remap(img, w, h, |r, c| img.get(h - 1 - c, r)),
            Augmentation::Rot270 => remap(img, w, h, |r, c| img.get(c, w - 1 - r)),
        }
    }

    pub fn apply(self, s: &Sample) -> Sample {
        Sample {
            image: self.apply_image(&s.image),
            objects: s
                .objects
                .iter()
                .map(|o| GroundTruthObject { class_id: o.class_id, bbox: self.apply_box(snap_box(o.bbox)) })
                .collect(),
        }
    }
}

fn remap(_src: &GrayImage, height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> GrayImage {
    let mut pixels = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            pixels.push(f(r, c));
        }
    }
    GrayImage { height, width, pixels }
}

/// Nearest-neighbor resize using pixel-center sampling.
pub fn resize_nearest(img: &GrayImage, height: usize, width: usize) -> GrayImage {
    if img.height == height && img.width == width {
        return img.clone();
    }
    let src_row = |r: usize| (((r as f64 + 0.5) * img.height as f64 / height as f64) as usize).min(img.height - 1);
    let src_col = |c: usize| (((c as f64 + 0.5) * img.width as f64 / width as f64) as usize).min(img.width - 1);
    remap(img, height, width, |r, c| img.get(src_row(r), src_col(c)))
}

/// Resize to `target` (height, width), then append one augmented copy per
/// requested transform. The resized original is always first.
pub fn preprocess(sample: &Sample, target: (usize, usize), augment: &[Augmentation]) -> Vec<Sample> {
    let base = Sample {
        image: resize_nearest(&sample.image, target.0, target.1),
        objects: sample
            .objects
            .iter()
            .map(|o| GroundTruthObject { class_id: o.class_id, bbox: snap_box(o.bbox) })
            .collect(),
    };
    let mut out = Vec::with_capacity(1 + augment.len());
    for a in augment {
        out.push(a.apply(&base));
    }
    out.insert(0, base);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: BBox, b: BBox) -> bool {
        (a.cx - b.cx).abs() < 1e-12
            && (a.cy - b.cy).abs() < 1e-12
            && (a.w - b.w).abs() < 1e-12
            && (a.h - b.h).abs() < 1e-12
    }

    #[test]
    fn box_maps() {
        let b = BBox::new(0.3, 0.4, 0.2, 0.1);
        assert!(close(Augmentation::FlipH.apply_box(b), BBox::new(0.7, 0.4, 0.2, 0.1)));
        assert!(close(Augmentation::Rot90.apply_box(b), BBox::new(0.6, 0.3, 0.1, 0.2)));
        let b = snap_box(b);
        let twice = Augmentation::Rot180.apply_box(Augmentation::Rot180.apply_box(b));
        assert_eq!(twice, b);
    }

    /// Rasterize a box on an n x n mask, rotate the mask with the pixel
    /// transform, and read the box back from the mask extent.
    #[test]
    fn box_maps_agree_with_rasterized_masks() {
        let n = 200;
        let b = BBox::new(0.3, 0.4, 0.2, 0.1);
        let (x0, y0, x1, y1) = b.corners();
        let mut mask = GrayImage::filled(n, n, 0.0);
        for r in 0..n {
            for c in 0..n {
                let (x, y) = ((c as f64 + 0.5) / n as f64, (r as f64 + 0.5) / n as f64);
                if x > x0 && x < x1 && y > y0 && y < y1 {
                    mask.set(r, c, 1.0);
                }
            }
        }
        for a in Augmentation::ALL {
            let m = a.apply_image(&mask);
            let on: Vec<(usize, usize)> =
                (0..n).flat_map(|r| (0..n).map(move |c| (r, c))).filter(|&(r, c)| m.get(r, c) > 0.5).collect();
            let rmin = on.iter().map(|p| p.0).min().unwrap() as f64;
            let rmax = on.iter().map(|p| p.0).max().unwrap() as f64 + 1.0;
            let cmin = on.iter().map(|p| p.1).min().unwrap() as f64;
            let cmax = on.iter().map(|p| p.1).max().unwrap() as f64 + 1.0;
            let got = BBox::from_corners(cmin / n as f64, rmin / n as f64, cmax / n as f64, rmax / n as f64);
            let want = a.apply_box(b);
            assert!(
                (got.cx - want.cx).abs() < 1e-9
                    && (got.cy - want.cy).abs() < 1e-9
                    && (got.w - want.w).abs() < 1e-9
                    && (got.h - want.h).abs() < 1e-9,
                "{a:?}: {got:?} vs {want:?}"
            );
        }
    }

    #[test]
    fn resize_nearest_picks_centers() {
        let img = GrayImage::new(2, 2, vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        let up = resize_nearest(&img, 4, 4);
        assert_eq!(up.get(0, 0), 0.0);
        assert_eq!(up.get(0, 3), 0.25);
        assert_eq!(up.get(3, 0), 0.5);
        assert_eq!(up.get(3, 3), 1.0);
        let down = resize_nearest(&up, 2, 2);
        assert_eq!(down, img);
    }

    #[test]
    fn preprocess_keeps_original_first() {
        let s = Sample {
            image: GrayImage::new(2, 3, (0..6).map(|v| v as f64 / 6.0).collect()).unwrap(),
            objects: vec![GroundTruthObject { class_id: 2, bbox: BBox::new(0.3, 0.4, 0.2, 0.1) }],
        };
        let out = preprocess(&s, (2, 3), &[Augmentation::Rot90, Augmentation::FlipV]);
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].image, s.image);
        assert_eq!((out[1].image.height, out[1].image.width), (3, 2));
        assert_eq!(out[1].objects[0].class_id, 2);
    }
}
