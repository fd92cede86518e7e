use serde::{Deserialize, Serialize};

/// Axis-aligned box in normalized image coordinates, center/size form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { cx: 0.5 * (x0 + x1), cy: 0.5 * (y0 + y1), w: x1 - x0, h: y1 - y0 }
    }

    /// `(x0, y0, x1, y1)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (self.cx - 0.5 * self.w, self.cy - 0.5 * self.h, self.cx + 0.5 * self.w, self.cy + 0.5 * self.h)
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    /// True when `0 < w, h <= 1` and the box lies inside the unit square.
    pub fn is_inside_unit(&self) -> bool {
        const EPS: f64 = 1e-12;
        let (x0, y0, x1, y1) = self.corners();
        self.w > 0.0
            && self.h > 0.0
            && self.w <= 1.0
            && self.h <= 1.0
            && x0 >= -EPS
            && y0 >= -EPS
            && x1 <= 1.0 + EPS
            && y1 <= 1.0 + EPS
    }

    pub fn is_finite(&self) -> bool {
        self.cx.is_finite() && self.cy.is_finite() && self.w.is_finite() && self.h.is_finite()
    }
}

/// Intersection over union. Zero-area boxes give 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    if a.area() <= 0.0 || b.area() <= 0.0 {
        return 0.0;
    }
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let area_a = (ax1 - ax0) * (ay1 - ay0);
    let area_b = (bx1 - bx0) * (by1 - by0);
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    (inter / (area_a + area_b - inter)).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_disjoint_nested() {
        let a = BBox::new(0.5, 0.5, 0.2, 0.2);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(0.1, 0.1, 0.1, 0.1)), 0.0);
        let outer = BBox::new(0.5, 0.5, 0.4, 0.4);
        assert!((iou(&a, &outer) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn zero_area_is_zero() {
        let a = BBox::new(0.5, 0.5, 0.0, 0.2);
        assert_eq!(iou(&a, &a), 0.0);
    }

    #[test]
    fn inside_unit() {
        assert!(BBox::new(0.5, 0.5, 1.0, 1.0).is_inside_unit());
        assert!(!BBox::new(0.95, 0.5, 0.2, 0.2).is_inside_unit());
        assert!(!BBox::new(0.5, 0.5, 0.0, 0.2).is_inside_unit());
    }
}
