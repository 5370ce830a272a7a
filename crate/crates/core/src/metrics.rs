//! Binary classification metrics with "feasible" as the positive class.
//!
//! Metrics whose denominator is zero are `None` rather than 0.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }
}

pub fn confusion(y_true: &[bool], y_pred: &[bool]) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(Error::InvalidArgument("confusion matrix of zero samples".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t, p) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fn_ += 1,
            (false, true) => cm.fp += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Harmonic mean of precision and recall.
pub fn f1_score(precision: f64, recall: f64) -> Option<f64> {
    let s = precision + recall;
    (s > 0.0).then(|| 2.0 * precision * recall / s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarMetrics {
    pub acc: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub f1: Option<f64>,
}

impl ScalarMetrics {
    pub const NAMES: [&'static str; 6] = ["acc", "precision", "recall", "tpr", "fpr", "f1"];

    pub fn values(&self) -> [Option<f64>; 6] {
        [self.acc, self.precision, self.recall, self.tpr, self.fpr, self.f1]
    }

    /// `key: value` lines rounded to 4 decimals for display.
    pub fn display_report(&self) -> String {
        let mut out = String::new();
        for (k, v) in Self::NAMES.iter().zip(self.values()) {
            let _ = writeln!(out, "{k}: {}", fmt_metric(v));
        }
        out
    }
}

pub fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "undefined".to_string(),
    }
}

pub fn scalar_metrics(cm: &ConfusionMatrix) -> ScalarMetrics {
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    ScalarMetrics {
        acc: ratio(cm.tp + cm.tn, cm.total()),
        precision,
        recall,
        tpr: recall,
        fpr: ratio(cm.fp, cm.fp + cm.tn),
        f1: match (precision, recall) {
            (Some(p), Some(r)) => f1_score(p, r),
            _ => None,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl Curve {
    fn from_points(points: Vec<(f64, f64)>) -> Self {
        let auc = points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum();
        Self { points, auc }
    }

    pub fn to_csv(&self, x_name: &str, y_name: &str) -> String {
        let mut out = format!("{x_name},{y_name}\n");
        for (x, y) in &self.points {
            let _ = writeln!(out, "{x},{y}");
        }
        out
    }
}

/// Cumulative (tp, fp) after each group of tied scores, highest scores first.
fn sweep(y_true: &[bool], scores: &[f64]) -> Result<Vec<(u64, u64, f64)>> {
    if y_true.len() != scores.len() {
        return Err(Error::LengthMismatch(y_true.len(), scores.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    for (i, &k) in order.iter().enumerate() {
        if y_true[k] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = order.get(i + 1).is_none_or(|&n| scores[n] != scores[k]);
        if last_of_group {
            out.push((tp, fp, scores[k]));
        }
    }
    Ok(out)
}

/// ROC curve (FPR, TPR) thresholded at each distinct score.
pub fn roc_curve(y_true: &[bool], scores: &[f64]) -> Result<Curve> {
    let pos = y_true.iter().filter(|t| **t).count() as f64;
    let neg = y_true.len() as f64 - pos;
    let groups = sweep(y_true, scores)?;
    if pos == 0.0 || neg == 0.0 {
        return Err(Error::RocUndefined);
    }
    let mut points = vec![(0.0, 0.0)];
    points.extend(groups.iter().map(|&(tp, fp, _)| (fp as f64 / neg, tp as f64 / pos)));
    Ok(Curve::from_points(points))
}

/// Precision-recall curve (R, P). The zero-recall point takes the
/// precision of the highest-score group.
pub fn pr_curve(y_true: &[bool], scores: &[f64]) -> Result<Curve> {
    let pos = y_true.iter().filter(|t| **t).count() as f64;
    let groups = sweep(y_true, scores)?;
    if pos == 0.0 {
        return Err(Error::InvalidArgument(
            "precision-recall curve needs a positive sample".into(),
        ));
    }
    let prec = |tp: u64, fp: u64| tp as f64 / (tp + fp) as f64;
    let mut points = Vec::with_capacity(groups.len() + 1);
    if let Some(&(tp, fp, _)) = groups.first() {
        points.push((0.0, prec(tp, fp)));
    }
    points.extend(groups.iter().map(|&(tp, fp, _)| (tp as f64 / pos, prec(tp, fp))));
    Ok(Curve::from_points(points))
}
