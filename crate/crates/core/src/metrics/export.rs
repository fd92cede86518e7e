use std::fmt::Write;

use super::{ConfusionMatrix, CurveSeries, MapTable, PrCurve};

/// `threshold,class_0,...,class_{C-1},all`
pub fn curve_csv(series: &CurveSeries) -> String {
    let c = series.per_class.len();
    let mut out = String::from("threshold");
    for k in 0..c {
        write!(out, ",class_{k}").unwrap();
    }
    out.push_str(",all\n");
    for (i, t) in series.thresholds.iter().enumerate() {
        write!(out, "{t:.2}").unwrap();
        for row in &series.per_class {
            write!(out, ",{}", row[i]).unwrap();
        }
        writeln!(out, ",{}", series.all[i]).unwrap();
    }
    out
}

/// Envelope precision sampled at recall 0.00..1.00; `all` is the class mean.
pub fn pr_curve_csv(pr: &PrCurve) -> String {
    let c = pr.per_class.len();
    let mut out = String::from("recall");
    for k in 0..c {
        write!(out, ",class_{k}").unwrap();
    }
    out.push_str(",all\n");
    for step in 0..=100 {
        let r = step as f64 / 100.0;
        write!(out, "{r:.2}").unwrap();
        let vals: Vec<f64> = (0..c).map(|k| pr.envelope_at(k, r)).collect();
        for v in &vals {
            write!(out, ",{v}").unwrap();
        }
        let mean = if c == 0 { 0.0 } else { vals.iter().sum::<f64>() / c as f64 };
        writeln!(out, ",{mean}").unwrap();
    }
    out
}

pub fn ap_table_csv(table: &MapTable) -> String {
    let mut out = String::from("class,images,instances,box_p,r,map50,map50_95\n");
    for r in std::iter::once(&table.all).chain(&table.rows) {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.class, r.images, r.instances, r.precision, r.recall, r.map50, r.map50_95
        )
        .unwrap();
    }
    out
}

/// Aligned plain-text table: Class, Images, Box(P), R, mAP50, mAP50-95.
pub fn ap_table_text(table: &MapTable) -> String {
    let mut out =
        format!("{:<12} {:>7} {:>8} {:>8} {:>8} {:>9}\n", "Class", "Images", "Box(P)", "R", "mAP50", "mAP50-95");
    for r in std::iter::once(&table.all).chain(&table.rows) {
        let mark = if r.ap_defined { "" } else { " (no truths)" };
        writeln!(
            out,
            "{:<12} {:>7} {:>8.3} {:>8.3} {:>8.3} {:>9.3}{mark}",
            r.class, r.images, r.precision, r.recall, r.map50, r.map50_95
        )
        .unwrap();
    }
    out
}

/// Rows are ground truth, columns predictions; the last of each is background.
pub fn confusion_csv(m: &ConfusionMatrix, class_names: &[String]) -> String {
    let mut names: Vec<String> = class_names.to_vec();
    names.push("background".into());
    let mut out = String::from("truth\\pred");
    for n in &names {
        write!(out, ",{n}").unwrap();
    }
    out.push('\n');
    for (name, row) in names.iter().zip(&m.counts) {
        out.push_str(name);
        for v in row {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}
