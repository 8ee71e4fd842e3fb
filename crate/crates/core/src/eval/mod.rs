//! IoU scoring, subject-disjoint split plans, per-split aggregation and
//! method comparison.

mod report;
mod splits;
mod stats;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use report::{CompareReport, EvalReport, ImageRecord, SplitSummary};
pub use splits::{make_splits, Split, SplitPlan};
pub use stats::{boxplot_stats, compare, improvement_pct, quantile, BoxplotStats, Comparison, ComparisonRow};

use crate::data_io::Sample;
use crate::error::{Error, Result};
use crate::mask::Mask;

/// `|pred ∧ truth| / |pred ∨ truth|`; two empty masks agree perfectly (1.0).
pub fn iou(pred: &Mask, truth: &Mask) -> Result<f64> {
    if !pred.same_dims(truth) {
        return Err(Error::shape(format!(
            "iou of {}x{} prediction against {}x{} truth",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &t) in pred.bits().iter().zip(truth.bits()) {
        inter += (p && t) as usize;
        union += (p || t) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Arithmetic mean with a fixed left-to-right summation order.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub id: String,
    pub iou: f64,
    /// Set when the segmenter returned an error; such images score 0.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoUResult {
    pub per_image: Vec<ImageScore>,
    pub mean_iou: f64,
}

impl IoUResult {
    pub fn from_scores(per_image: Vec<ImageScore>) -> Self {
        let values: Vec<f64> = per_image.iter().map(|s| s.iou).collect();
        Self {
            mean_iou: mean(&values),
            per_image,
        }
    }
}

/// Runs `segmenter` on every sample (in parallel) and scores it against the
/// paired truth. A segmenter error counts as IoU 0 for that image; a
/// prediction whose size differs from the truth is an error.
pub fn evaluate<F>(segmenter: F, samples: &[(Sample, Mask)]) -> Result<IoUResult>
where
    F: Fn(&Sample) -> Result<Mask> + Sync,
{
    if samples.is_empty() {
        return Err(Error::config("evaluate needs at least one sample"));
    }
    let scores = samples
        .par_iter()
        .map(|(sample, truth)| match segmenter(sample) {
            Ok(pred) => Ok(ImageScore {
                id: sample.id(),
                iou: iou(&pred, truth)?,
                failure: None,
            }),
            Err(e) => Ok(ImageScore {
                id: sample.id(),
                iou: 0.0,
                failure: Some(e.to_string()),
            }),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IoUResult::from_scores(scores))
}
