//! Confusion-matrix metrics, fold aggregation and the overall ranking score.

mod ranking;
pub mod table_io;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub use ranking::{ors, rs_classwise, rsn_accuracy, rsn_classwise, rsn_fps, Alpha, ClassFolds, ClassMetric, ModelEntry, OrsResult, OrsRow, RankingTable, CI_FLOOR};

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![vec![0; classes]; classes] }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.counts[i][i]).sum()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Input(format!("cannot add {}-class and {}-class matrices", self.classes, other.classes)));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    /// One-vs-rest `(tp, fp, fn, tn)` for class `k`.
    pub fn one_vs_rest(&self, k: usize) -> (u64, u64, u64, u64) {
        let tp = self.counts[k][k];
        let fp = (0..self.classes).map(|t| self.counts[t][k]).sum::<u64>() - tp;
        let fn_ = self.counts[k].iter().sum::<u64>() - tp;
        (tp, fp, fn_, self.total() - tp - fp - fn_)
    }
}

pub fn confusion(preds: &[usize], targets: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != targets.len() {
        return Err(Error::Input(format!("{} predictions for {} targets", preds.len(), targets.len())));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&p, &t) in preds.iter().zip(targets) {
        if p >= classes || t >= classes {
            return Err(Error::Input(format!("class index out of range 0..{classes}: pred {p}, target {t}")));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

/// Which denominator was zero for a class; the metric is then reported as 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degenerate {
    Precision,
    Recall,
    Specificity,
    F1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    pub degenerate: Vec<Degenerate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
}

impl MetricSet {
    pub fn macro_average(&self, metric: ClassMetric) -> f64 {
        self.per_class.iter().map(|c| metric.of(c)).sum::<f64>() / self.per_class.len() as f64
    }
}

fn ratio(num: u64, den: u64, flag: Degenerate, flags: &mut Vec<Degenerate>) -> f64 {
    if den == 0 {
        flags.push(flag);
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics_from_confusion(cm: &ConfusionMatrix) -> Result<MetricSet> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Input("empty confusion matrix".into()));
    }
    let per_class = (0..cm.classes)
        .map(|k| {
            let (tp, fp, fn_, tn) = cm.one_vs_rest(k);
            let mut degenerate = Vec::new();
            let precision = ratio(tp, tp + fp, Degenerate::Precision, &mut degenerate);
            let recall = ratio(tp, tp + fn_, Degenerate::Recall, &mut degenerate);
            let specificity = ratio(tn, tn + fp, Degenerate::Specificity, &mut degenerate);
            let f1 = if precision + recall == 0.0 {
                degenerate.push(Degenerate::F1);
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics { precision, recall, specificity, f1, degenerate }
        })
        .collect();
    Ok(MetricSet { accuracy: cm.trace() as f64 / total as f64, per_class })
}

/// Mean, sample standard deviation and a two-sided 95% Student-t interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub mean: f64,
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci_length: f64,
}

pub fn aggregate_folds(values: &[f64]) -> Result<FoldSummary> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Input(format!("need at least 2 fold values, got {n}")));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::Input(format!("student t: {e}")))?
        .inverse_cdf(0.975);
    let half = t * std / (n as f64).sqrt();
    Ok(FoldSummary { mean, std, ci_low: mean - half, ci_high: mean + half, ci_length: 2.0 * half })
}
