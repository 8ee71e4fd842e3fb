use serde::{Deserialize, Serialize};

use super::mean;
use crate::error::{Error, Result};

/// `100 · (b − a) / a`; `None` when `a` is zero.
pub fn improvement_pct(a: f64, b: f64) -> Option<f64> {
    if a == 0.0 {
        None
    } else {
        Some(100.0 * (b - a) / a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    /// Zero-based split index; `None` on the average row.
    pub split: Option<usize>,
    pub mean_iou_a: f64,
    pub mean_iou_b: f64,
    /// `None` flags an undefined improvement (`mean_iou_a == 0`).
    pub improvement_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub average: ComparisonRow,
}

/// Split-wise comparison of method `a` (reference) against method `b`.
///
/// The average row takes the improvement of the column means, not the mean
/// of the per-row improvements.
pub fn compare(a: &[f64], b: &[f64]) -> Result<Comparison> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "cannot compare {} splits against {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::config("compare needs at least one split"));
    }
    let rows = a
        .iter()
        .zip(b)
        .enumerate()
        .map(|(i, (&x, &y))| ComparisonRow {
            split: Some(i),
            mean_iou_a: x,
            mean_iou_b: y,
            improvement_pct: improvement_pct(x, y),
        })
        .collect();
    let (ma, mb) = (mean(a), mean(b));
    Ok(Comparison {
        rows,
        average: ComparisonRow {
            split: None,
            mean_iou_a: ma,
            mean_iou_b: mb,
            improvement_pct: improvement_pct(ma, mb),
        },
    })
}

/// Quantile of sorted data by linear interpolation between the closest
/// order statistics: position `h = (n − 1)·p`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    /// Values strictly outside `[q1 − 1.5·iqr, q3 + 1.5·iqr]`, in input order.
    pub outliers: Vec<f64>,
    /// The remaining values, in input order.
    pub inliers: Vec<f64>,
}

pub fn boxplot_stats(values: &[f64]) -> Result<BoxplotStats> {
    if values.is_empty() {
        return Err(Error::config("boxplot statistics need at least one value"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("boxplot values must be finite"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (q1, median, q3) = (quantile(&sorted, 0.25), quantile(&sorted, 0.5), quantile(&sorted, 0.75));
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let (outliers, inliers): (Vec<f64>, Vec<f64>) = values.iter().partition(|&&v| v < lo_fence || v > hi_fence);
    Ok(BoxplotStats {
        median,
        q1,
        q3,
        iqr,
        whisker_low: sorted[0].max(lo_fence),
        whisker_high: sorted[sorted.len() - 1].min(hi_fence),
        outliers,
        inliers,
    })
}
