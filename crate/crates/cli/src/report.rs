//! CSV tables and SVG line charts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use fedyolo::evaluate::Evaluation;
use fedyolo::metrics::{ap_table_csv, ap_table_text, confusion_csv, curve_csv, pr_curve_csv, ConfusionMatrix};

use crate::pipeline::Summary;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// A static SVG line chart with one `<polyline>` per series.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series<'_>]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 150.0, 40.0, 50.0);
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut out = String::new();
    writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#)
        .unwrap();
    writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        w / 2.0,
        escape(title)
    )
    .unwrap();
    writeln!(out, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#).unwrap();
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let yv = y0 + f * (y1 - y0);
        let xv = x0 + f * (x1 - x0);
        writeln!(
            out,
            r#"<text x="{}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{yv:.3}</text>"#,
            left - 4.0,
            sy(yv) + 4.0
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{xv:.3}</text>"#,
            sx(xv),
            top + ph + 16.0
        )
        .unwrap();
    }
    writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        left + pw / 2.0,
        h - 12.0,
        escape(x_label)
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    )
    .unwrap();
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, coords.join(" "))
            .unwrap();
        let ly = top + 14.0 + 18.0 * i as f64;
        writeln!(
            out,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            w - right + 10.0,
            w - right + 30.0
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#,
            w - right + 36.0,
            ly + 4.0,
            escape(s.name)
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Curve, AP and confusion tables plus the F1 chart.
pub fn write_metrics(dir: &Path, e: &Evaluation, class_names: &[String]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write(&dir.join("p_curve.csv"), &curve_csv(&e.curves.precision))?;
    write(&dir.join("r_curve.csv"), &curve_csv(&e.curves.recall))?;
    write(&dir.join("f1_curve.csv"), &curve_csv(&e.curves.f1))?;
    write(&dir.join("pr_curve.csv"), &pr_curve_csv(&e.curves.pr))?;
    write(&dir.join("ap_table.csv"), &ap_table_csv(&e.table))?;
    write(&dir.join("ap_table.txt"), &ap_table_text(&e.table))?;
    write(&dir.join("confusion.csv"), &confusion_csv(&e.confusion, class_names))?;

    let t = e.curves.thresholds();
    let mut series: Vec<Series<'_>> = class_names
        .iter()
        .zip(&e.curves.f1.per_class)
        .map(|(name, v)| Series { name, points: t.iter().copied().zip(v.iter().copied()).collect() })
        .collect();
    series.push(Series { name: "all", points: t.iter().copied().zip(e.curves.f1.all.iter().copied()).collect() });
    write(&dir.join("f1_curve.svg"), &line_chart("F1-confidence", "confidence", "F1", &series))
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `round,fl_accuracy,ml_accuracy,accuracy_diff,fl_loss,ml_loss,loss_diff`,
/// one row per round up to the longer run; missing values are blank.
pub fn comparison_csv(fl: &Summary, ml: &Summary) -> String {
    let rows = fl.rounds.len().max(ml.rounds.len());
    let mut out = String::from("round,fl_accuracy,ml_accuracy,accuracy_diff,fl_loss,ml_loss,loss_diff\n");
    for i in 0..rows {
        let a = fl.rounds.get(i);
        let b = ml.rounds.get(i);
        let fa = a.and_then(|r| r.val_accuracy);
        let ma = b.and_then(|r| r.val_accuracy);
        let fl_loss = a.map(|r| r.train_loss);
        let ml_loss = b.map(|r| r.train_loss);
        let diff = |x: Option<f64>, y: Option<f64>| x.zip(y).map(|(x, y)| x - y);
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            i + 1,
            cell(fa),
            cell(ma),
            cell(diff(fa, ma)),
            cell(fl_loss),
            cell(ml_loss),
            cell(diff(fl_loss, ml_loss))
        )
        .unwrap();
    }
    out
}

fn matrix(s: &Summary) -> ConfusionMatrix {
    ConfusionMatrix { num_classes: s.class_names.len(), counts: s.eval.confusion.clone() }
}

/// Side-by-side accuracy and loss series, two charts, and both confusion matrices.
pub fn compare(fl: &Summary, ml: &Summary, out: &Path) -> Result<()> {
    if fl.class_names != ml.class_names {
        bail!(crate::pipeline::SchemaError(format!(
            "class names differ: {:?} vs {:?}",
            fl.class_names, ml.class_names
        )));
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join("comparison.csv"), &comparison_csv(fl, ml))?;
    let series = |s: &Summary, f: fn(&crate::pipeline::RoundPoint) -> Option<f64>| -> Vec<(f64, f64)> {
        s.rounds.iter().filter_map(|r| f(r).map(|v| (r.round as f64, v))).collect()
    };
    let fl_name = format!("FL ({})", fl.mode);
    let ml_name = format!("ML ({})", ml.mode);
    let acc = line_chart(
        "Accuracy per round",
        "round",
        "accuracy",
        &[
            Series { name: &fl_name, points: series(fl, |r| r.val_accuracy) },
            Series { name: &ml_name, points: series(ml, |r| r.val_accuracy) },
        ],
    );
    write(&out.join("accuracy.svg"), &acc)?;
    let loss = line_chart(
        "Training loss per round",
        "round",
        "loss",
        &[
            Series { name: &fl_name, points: series(fl, |r| Some(r.train_loss)) },
            Series { name: &ml_name, points: series(ml, |r| Some(r.train_loss)) },
        ],
    );
    write(&out.join("loss.svg"), &loss)?;
    write(&out.join("confusion_fl.csv"), &confusion_csv(&matrix(fl), &fl.class_names))?;
    write(&out.join("confusion_ml.csv"), &confusion_csv(&matrix(ml), &ml.class_names))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_has_one_polyline_per_series() {
        let svg = line_chart(
            "a < b",
            "x",
            "y",
            &[Series { name: "one", points: vec![(0.0, 1.0), (1.0, 2.0)] }, Series { name: "two", points: vec![] }],
        );
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a &lt; b"));
    }
}
