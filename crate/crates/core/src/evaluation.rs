//! Confusion counts, per-class and macro-averaged metrics, and reports.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Counts for one class treated as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// The shared 2×2 matrix, `matrix[label][pred]`, viewed per class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub matrix: [[u64; 2]; 2],
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.matrix.iter().flatten().sum()
    }

    /// Counts with `class` as the positive label.
    pub fn view(&self, class: usize) -> ClassCounts {
        let other = 1 - class;
        let m = &self.matrix;
        ClassCounts {
            tp: m[class][class],
            fp: m[other][class],
            fn_: m[class][other],
            tn: m[other][other],
        }
    }

    /// Builds the matrix from a class-1 view.
    pub fn from_view(c: ClassCounts) -> Self {
        ConfusionCounts {
            matrix: [[c.tn, c.fp], [c.fn_, c.tp]],
        }
    }
}

pub fn confusion(preds: &[u8], labels: &[u8]) -> Result<ConfusionCounts> {
    if preds.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Contract("no predictions to score".into()));
    }
    let mut c = ConfusionCounts::default();
    for (i, (&p, &l)) in preds.iter().zip(labels).enumerate() {
        if p > 1 || l > 1 {
            return Err(Error::Contract(format!("entry {i}: prediction {p}, label {l} outside {{0,1}}")));
        }
        c.matrix[l as usize][p as usize] += 1;
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub classes: [ClassMetrics; 2],
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub counts: ConfusionCounts,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Zero denominators yield 0 for the affected metric.
pub fn compute_metrics(c: &ConfusionCounts) -> MetricsReport {
    let classes = [0, 1].map(|k| {
        let v = c.view(k);
        let precision = ratio(v.tp as f64, (v.tp + v.fp) as f64);
        let recall = ratio(v.tp as f64, (v.tp + v.fn_) as f64);
        ClassMetrics {
            precision,
            recall,
            f1: ratio(2.0 * precision * recall, precision + recall),
            support: v.tp + v.fn_,
        }
    });
    let one = c.view(1);
    MetricsReport {
        accuracy: ratio((one.tp + one.tn) as f64, c.total() as f64),
        macro_precision: (classes[0].precision + classes[1].precision) / 2.0,
        macro_recall: (classes[0].recall + classes[1].recall) / 2.0,
        macro_f1: (classes[0].f1 + classes[1].f1) / 2.0,
        classes,
        counts: *c,
    }
}

pub fn evaluate(preds: &[u8], labels: &[u8]) -> Result<MetricsReport> {
    Ok(compute_metrics(&confusion(preds, labels)?))
}

pub const CLASS_NAMES: [&str; 2] = ["non-rumor", "rumor"];

/// Fixed-width table with four-decimal values.
pub fn format_report(r: &MetricsReport) -> String {
    let mut s = String::new();
    let total = r.counts.total();
    writeln!(s, "{:>12} {:>9} {:>9} {:>9} {:>9}", "", "precision", "recall", "f1-score", "support").unwrap();
    writeln!(s).unwrap();
    for (name, c) in CLASS_NAMES.iter().zip(&r.classes) {
        writeln!(
            s,
            "{name:>12} {:>9.4} {:>9.4} {:>9.4} {:>9}",
            c.precision, c.recall, c.f1, c.support
        )
        .unwrap();
    }
    writeln!(s).unwrap();
    writeln!(s, "{:>12} {:>9} {:>9} {:>9.4} {:>9}", "accuracy", "", "", r.accuracy, total).unwrap();
    writeln!(
        s,
        "{:>12} {:>9.4} {:>9.4} {:>9.4} {:>9}",
        "macro avg", r.macro_precision, r.macro_recall, r.macro_f1, total
    )
    .unwrap();
    s
}

/// `metric\tclass\tvalue` lines.
pub fn format_report_tsv(r: &MetricsReport) -> String {
    let mut s = String::from("metric\tclass\tvalue\n");
    for (k, c) in r.classes.iter().enumerate() {
        writeln!(s, "precision\t{k}\t{:.4}", c.precision).unwrap();
        writeln!(s, "recall\t{k}\t{:.4}", c.recall).unwrap();
        writeln!(s, "f1\t{k}\t{:.4}", c.f1).unwrap();
        writeln!(s, "support\t{k}\t{}", c.support).unwrap();
    }
    writeln!(s, "accuracy\tall\t{:.4}", r.accuracy).unwrap();
    writeln!(s, "macro_precision\tall\t{:.4}", r.macro_precision).unwrap();
    writeln!(s, "macro_recall\tall\t{:.4}", r.macro_recall).unwrap();
    writeln!(s, "macro_f1\tall\t{:.4}", r.macro_f1).unwrap();
    s
}
