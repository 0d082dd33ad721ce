//! Textbook formulas evaluated directly from a class-1 confusion table.

pub struct Expected {
    pub accuracy: f64,
    /// Indexed by class.
    pub precision: [f64; 2],
    pub recall: [f64; 2],
    pub f1: [f64; 2],
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
}

fn safe_div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

pub fn expected(tp: u64, fp: u64, fn_: u64, tn: u64) -> Expected {
    let (tp, fp, fn_, tn) = (tp as f64, fp as f64, fn_ as f64, tn as f64);
    // class 0 as positive swaps the roles: its TP is TN, its FP is FN
    let precision = [safe_div(tn, tn + fn_), safe_div(tp, tp + fp)];
    let recall = [safe_div(tn, tn + fp), safe_div(tp, tp + fn_)];
    let f1 = [0, 1].map(|k| safe_div(2.0 * precision[k] * recall[k], precision[k] + recall[k]));
    Expected {
        accuracy: safe_div(tp + tn, tp + tn + fp + fn_),
        macro_f1: 0.5 * (f1[0] + f1[1]),
        macro_precision: 0.5 * (precision[0] + precision[1]),
        macro_recall: 0.5 * (recall[0] + recall[1]),
        precision,
        recall,
        f1,
    }
}
