//! Slow, direct reference implementations for cross-checking.
//!
//! Everything here works on plain numbers so it shares no code with the
//! library under test. Boxes are `[cx, cy, w, h]` in unit coordinates.

pub type Box4 = [f64; 4];

/// IoU by rasterizing both boxes on an `n x n` pixel-center grid.
pub fn iou_raster(a: Box4, b: Box4, n: usize) -> f64 {
    let inside = |bx: &Box4, x: f64, y: f64| (x - bx[0]).abs() <= bx[2] / 2.0 && (y - bx[1]).abs() <= bx[3] / 2.0;
    let (mut inter, mut union) = (0u64, 0u64);
    for row in 0..n {
        let y = (row as f64 + 0.5) / n as f64;
        for col in 0..n {
            let x = (col as f64 + 0.5) / n as f64;
            let (ia, ib) = (inside(&a, x, y), inside(&b, x, y));
            if ia && ib {
                inter += 1;
            }
            if ia || ib {
                union += 1;
            }
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Exact IoU from the corner formula, written out long-hand.
pub fn iou_exact(a: Box4, b: Box4) -> f64 {
    let ax0 = a[0] - a[2] / 2.0;
    let ax1 = a[0] + a[2] / 2.0;
    let ay0 = a[1] - a[3] / 2.0;
    let ay1 = a[1] + a[3] / 2.0;
    let bx0 = b[0] - b[2] / 2.0;
    let bx1 = b[0] + b[2] / 2.0;
    let by0 = b[1] - b[3] / 2.0;
    let by1 = b[1] + b[3] / 2.0;
    let w = f64::max(0.0, f64::min(ax1, bx1) - f64::max(ax0, bx0));
    let h = f64::max(0.0, f64::min(ay1, by1) - f64::max(ay0, by0));
    let inter = w * h;
    let union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
    if a[2] <= 0.0 || a[3] <= 0.0 || b[2] <= 0.0 || b[3] <= 0.0 || inter <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Det {
    pub class_id: usize,
    pub score: f64,
    pub bbox: Box4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truth {
    pub class_id: usize,
    pub bbox: Box4,
}

/// Greedy matching of `dets` (already in rank order): true-positive flags.
pub fn greedy_tp(dets: &[Det], truths: &[Truth], iou_threshold: f64) -> Vec<bool> {
    let mut used = vec![false; truths.len()];
    let mut flags = Vec::new();
    for d in dets {
        let mut best = None;
        let mut best_iou = -1.0;
        for (t, truth) in truths.iter().enumerate() {
            if used[t] || truth.class_id != d.class_id {
                continue;
            }
            let v = iou_exact(d.bbox, truth.bbox);
            if v >= iou_threshold && v > best_iou {
                best = Some(t);
                best_iou = v;
            }
        }
        if let Some(t) = best {
            used[t] = true;
        }
        flags.push(best.is_some());
    }
    flags
}

/// AP for `class_id` by evaluating precision and recall at every distinct
/// score cutoff (rematching at each) and integrating the precision envelope.
/// Each image's detections must already be in rank order. `None` without truths.
pub fn ap_exhaustive(images: &[(Vec<Det>, Vec<Truth>)], class_id: usize, iou_threshold: f64) -> Option<f64> {
    let num_truths: usize = images.iter().map(|(_, t)| t.iter().filter(|x| x.class_id == class_id).count()).sum();
    if num_truths == 0 {
        return None;
    }
    let mut cutoffs: Vec<f64> =
        images.iter().flat_map(|(d, _)| d.iter().filter(|x| x.class_id == class_id).map(|x| x.score)).collect();
    cutoffs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    cutoffs.dedup();

    // (recall, precision) at each cutoff
    let mut points = Vec::new();
    for &t in &cutoffs {
        let (mut tp, mut kept) = (0usize, 0usize);
        for (dets, truths) in images {
            let prefix: Vec<Det> = dets.iter().copied().filter(|d| d.score >= t).collect();
            let flags = greedy_tp(&prefix, truths, iou_threshold);
            for (d, f) in prefix.iter().zip(flags) {
                if d.class_id == class_id {
                    kept += 1;
                    if f {
                        tp += 1;
                    }
                }
            }
        }
        points.push((tp as f64 / num_truths as f64, tp as f64 / kept as f64));
    }

    let mut levels: Vec<f64> = points.iter().map(|p| p.0).collect();
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    levels.dedup();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for &r in &levels {
        let env = points.iter().filter(|p| p.0 >= r).map(|p| p.1).fold(0.0, f64::max);
        ap += (r - prev) * env;
        prev = r;
    }
    Some(ap)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub coord: f64,
    pub size: f64,
    pub conf_obj: f64,
    pub conf_noobj: f64,
    pub classification: f64,
    pub total: f64,
}

/// Five-term grid loss evaluated scalar by scalar.
///
/// `values` is row-major by cell; each cell holds `B` tuples
/// `(x, y, w, h, conf)` with `x, y` relative to the cell and `w, h` relative
/// to the image, then `C` class scores. `truths` are `(class, [cx, cy, w, h])`.
/// With `iou_target` the responsible box's confidence target is its IoU with
/// the truth, otherwise 1.
#[allow(clippy::too_many_arguments)]
pub fn yolo_loss(
    values: &[f64],
    s: usize,
    b: usize,
    c: usize,
    truths: &[(usize, Box4)],
    lambda_coord: f64,
    lambda_obj: f64,
    lambda_noobj: f64,
    iou_target: bool,
) -> LossTerms {
    let stride = 5 * b + c;
    assert_eq!(values.len(), s * s * stride);
    let at = |cell: usize, k: usize| values[cell * stride + k];

    // cell -> (class, box, cell-relative x, y)
    let mut owner: Vec<Option<(usize, Box4, f64, f64)>> = vec![None; s * s];
    for &(class, bx) in truths {
        let col = usize::min((bx[0] * s as f64).floor() as usize, s - 1);
        let row = usize::min((bx[1] * s as f64).floor() as usize, s - 1);
        let cell = row * s + col;
        assert!(owner[cell].is_none(), "two truths in cell {cell}");
        owner[cell] = Some((class, bx, bx[0] * s as f64 - col as f64, bx[1] * s as f64 - row as f64));
    }

    let (mut coord, mut size, mut obj, mut noobj, mut cls) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (cell, &owned) in owner.iter().enumerate() {
        let (row, col) = (cell / s, cell % s);
        let pred_box = |j: usize| -> Box4 {
            [
                (col as f64 + at(cell, 5 * j)) / s as f64,
                (row as f64 + at(cell, 5 * j + 1)) / s as f64,
                at(cell, 5 * j + 2),
                at(cell, 5 * j + 3),
            ]
        };
        let responsible = owned.map(|(_, bx, _, _)| {
            let mut best = 0;
            let mut best_iou = iou_exact(pred_box(0), bx);
            for j in 1..b {
                let v = iou_exact(pred_box(j), bx);
                if v > best_iou {
                    best = j;
                    best_iou = v;
                }
            }
            (best, best_iou)
        });
        for j in 0..b {
            let x = at(cell, 5 * j);
            let y = at(cell, 5 * j + 1);
            let w = at(cell, 5 * j + 2);
            let h = at(cell, 5 * j + 3);
            let conf = at(cell, 5 * j + 4);
            match (owned, responsible) {
                (Some((_, bx, tx, ty)), Some((r, r_iou))) if r == j => {
                    coord += (tx - x) * (tx - x) + (ty - y) * (ty - y);
                    let dw = bx[2].sqrt() - w.sqrt();
                    let dh = bx[3].sqrt() - h.sqrt();
                    size += dw * dw + dh * dh;
                    let target = if iou_target { r_iou } else { 1.0 };
                    obj += (target - conf) * (target - conf);
                }
                _ => noobj += conf * conf,
            }
        }
        if let Some((class, _, _, _)) = owned {
            for k in 0..c {
                let p = if k == class { 1.0 } else { 0.0 };
                let q = at(cell, 5 * b + k);
                cls += (p - q) * (p - q);
            }
        }
    }
    let coord = lambda_coord * coord;
    let size = lambda_coord * size;
    let conf_obj = lambda_obj * obj;
    let conf_noobj = lambda_noobj * noobj;
    LossTerms {
        coord,
        size,
        conf_obj,
        conf_noobj,
        classification: cls,
        total: coord + size + conf_obj + conf_noobj + cls,
    }
}

/// Column means of equal-length rows, summed top to bottom.
pub fn mean_columns(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    (0..rows[0].len()).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect()
}
