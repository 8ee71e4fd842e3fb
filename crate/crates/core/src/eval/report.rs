use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{boxplot_stats, compare, mean, BoxplotStats, Comparison, SplitPlan};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub subject_id: String,
    pub iou: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub index: usize,
    pub test_subjects: Vec<String>,
    pub n_images: usize,
    pub mean_iou: f64,
    pub images: Vec<ImageRecord>,
}

/// Per-image IoU grouped by test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub splits: Vec<SplitSummary>,
    /// Mean of the per-split means.
    pub mean_iou: f64,
}

impl EvalReport {
    /// Groups `images` by the test subjects of each split in `plan`; without
    /// a plan every image forms split 0.
    pub fn build(method: &str, images: &[ImageRecord], plan: Option<&SplitPlan>, only: Option<usize>) -> Result<Self> {
        let groups: Vec<(usize, Vec<String>)> = match plan {
            Some(p) => p
                .splits
                .iter()
                .enumerate()
                .filter(|(i, _)| only.is_none_or(|k| k == *i))
                .map(|(i, s)| (i, s.test.clone()))
                .collect(),
            None => {
                let mut subj: Vec<String> = images.iter().map(|r| r.subject_id.clone()).collect();
                subj.sort();
                subj.dedup();
                vec![(0, subj)]
            }
        };
        if groups.is_empty() {
            return Err(Error::config("no split selected for the report"));
        }
        let mut splits = Vec::new();
        for (index, test_subjects) in groups {
            let imgs: Vec<ImageRecord> = images
                .iter()
                .filter(|r| test_subjects.contains(&r.subject_id))
                .cloned()
                .collect();
            if imgs.is_empty() {
                return Err(Error::config(format!("split {index} has no test images")));
            }
            let values: Vec<f64> = imgs.iter().map(|r| r.iou).collect();
            splits.push(SplitSummary {
                index,
                test_subjects,
                n_images: imgs.len(),
                mean_iou: mean(&values),
                images: imgs,
            });
        }
        let means: Vec<f64> = splits.iter().map(|s| s.mean_iou).collect();
        Ok(Self {
            method: method.to_string(),
            mean_iou: mean(&means),
            splits,
        })
    }

    pub fn split_means(&self) -> Vec<f64> {
        self.splits.iter().map(|s| s.mean_iou).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# method: {}", self.method);
        for s in &self.splits {
            let _ = writeln!(
                out,
                "split {}  test subjects: {}  images: {}",
                s.index + 1,
                s.test_subjects.join(" "),
                s.n_images
            );
            for r in &s.images {
                let note = r.failure.as_deref().map(|f| format!("  FAILED: {f}")).unwrap_or_default();
                let _ = writeln!(out, "  {}\t{}\t{:.4}{note}", r.id, r.subject_id, r.iou);
            }
            let _ = writeln!(out, "  mean IoU {:.4}", s.mean_iou);
        }
        let _ = writeln!(out, "overall mean IoU {:.4}", self.mean_iou);
        out
    }
}

/// Table of split-wise means for two methods plus their boxplot summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub method_a: String,
    pub method_b: String,
    pub comparison: Comparison,
    pub boxplot_a: BoxplotStats,
    pub boxplot_b: BoxplotStats,
}

impl CompareReport {
    pub fn from_means(method_a: &str, a: &[f64], method_b: &str, b: &[f64]) -> Result<Self> {
        Ok(Self {
            method_a: method_a.to_string(),
            method_b: method_b.to_string(),
            comparison: compare(a, b)?,
            boxplot_a: boxplot_stats(a)?,
            boxplot_b: boxplot_stats(b)?,
        })
    }

    pub fn from_reports(a: &EvalReport, b: &EvalReport) -> Result<Self> {
        let ia: Vec<usize> = a.splits.iter().map(|s| s.index).collect();
        let ib: Vec<usize> = b.splits.iter().map(|s| s.index).collect();
        if ia != ib {
            return Err(Error::shape(format!("split indices differ: {ia:?} vs {ib:?}")));
        }
        Self::from_means(&a.method, &a.split_means(), &b.method, &b.split_means())
    }

    pub fn to_text(&self) -> String {
        let pct = |p: Option<f64>| p.map(|v| format!("{v:.1}%")).unwrap_or_else(|| "undefined".into());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>16} {:>16} {:>12}",
            "",
            format!("IoU ({})", self.method_a),
            format!("IoU ({})", self.method_b),
            "Improvement"
        );
        for r in &self.comparison.rows {
            let _ = writeln!(
                out,
                "{:<10} {:>16.4} {:>16.4} {:>12}",
                format!("Split {}", r.split.unwrap_or(0) + 1),
                r.mean_iou_a,
                r.mean_iou_b,
                pct(r.improvement_pct)
            );
        }
        let avg = &self.comparison.average;
        let _ = writeln!(
            out,
            "{:<10} {:>16.4} {:>16.4} {:>12}",
            "Average",
            avg.mean_iou_a,
            avg.mean_iou_b,
            pct(avg.improvement_pct)
        );
        for (name, b) in [(&self.method_a, &self.boxplot_a), (&self.method_b, &self.boxplot_b)] {
            let _ = writeln!(
                out,
                "boxplot {name}: median {:.4} q1 {:.4} q3 {:.4} whiskers [{:.4}, {:.4}] outliers {:?}",
                b.median, b.q1, b.q3, b.whisker_low, b.whisker_high, b.outliers
            );
        }
        out
    }
}
