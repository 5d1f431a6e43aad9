use serde::{Deserialize, Serialize};

use super::{aggregate_folds, ClassMetrics};
use crate::error::{Error, Result};

/// Lower bound on confidence-interval lengths used as divisors.
pub const CI_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassMetric {
    Recall,
    F1,
    Precision,
    Specificity,
}

impl ClassMetric {
    pub const ALL: [ClassMetric; 4] = [ClassMetric::Recall, ClassMetric::F1, ClassMetric::Precision, ClassMetric::Specificity];

    pub fn of(self, m: &ClassMetrics) -> f64 {
        match self {
            ClassMetric::Recall => m.recall,
            ClassMetric::F1 => m.f1,
            ClassMetric::Precision => m.precision,
            ClassMetric::Specificity => m.specificity,
        }
    }
}

/// Fold values of the four class metrics for one class.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassFolds {
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub precision: Vec<f64>,
    pub specificity: Vec<f64>,
}

impl ClassFolds {
    pub fn get(&self, metric: ClassMetric) -> &[f64] {
        match metric {
            ClassMetric::Recall => &self.recall,
            ClassMetric::F1 => &self.f1,
            ClassMetric::Precision => &self.precision,
            ClassMetric::Specificity => &self.specificity,
        }
    }

    pub fn get_mut(&mut self, metric: ClassMetric) -> &mut Vec<f64> {
        match metric {
            ClassMetric::Recall => &mut self.recall,
            ClassMetric::F1 => &mut self.f1,
            ClassMetric::Precision => &mut self.precision,
            ClassMetric::Specificity => &mut self.specificity,
        }
    }

    pub fn push(&mut self, m: &ClassMetrics) {
        for metric in ClassMetric::ALL {
            self.get_mut(metric).push(metric.of(m));
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub name: String,
    /// One entry per class, in the table's class order.
    pub per_class: Vec<ClassFolds>,
    pub accuracy: Vec<f64>,
    pub fps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingTable {
    pub classes: Vec<String>,
    pub models: Vec<ModelEntry>,
}

impl RankingTable {
    pub fn validate(&self) -> Result<()> {
        if self.models.len() < 2 {
            return Err(Error::Input(format!("ranking needs at least 2 models, got {}", self.models.len())));
        }
        if self.classes.is_empty() {
            return Err(Error::Input("ranking table has no classes".into()));
        }
        for m in &self.models {
            if m.per_class.len() != self.classes.len() {
                return Err(Error::Input(format!(
                    "model {} covers {} classes, table has {}",
                    m.name,
                    m.per_class.len(),
                    self.classes.len()
                )));
            }
            if !(m.fps > 0.0 && m.fps.is_finite()) {
                return Err(Error::Input(format!("model {} has non-positive FPS {}", m.name, m.fps)));
            }
        }
        Ok(())
    }
}

/// `(mean − min)/(max − min) / max(ci, CI_FLOOR)`, or all zeros when the
/// means coincide.
fn scaled_scores(means: &[f64], cis: &[f64]) -> Vec<f64> {
    let lo = means.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return vec![0.0; means.len()];
    }
    means.iter().zip(cis).map(|(m, l)| (m - lo) / (hi - lo) / l.max(CI_FLOOR)).collect()
}

/// Sum in ascending order, so the result does not depend on model order.
fn order_free_sum(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// Shares of a non-negative row; an all-zero row gets uniform shares.
fn shares(row: &[f64]) -> Vec<f64> {
    let total = order_free_sum(row);
    if total > 0.0 {
        row.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / row.len() as f64; row.len()]
    }
}

/// Per-class ranking scores, indexed `[class][model]`.
pub fn rs_classwise(table: &RankingTable, metric: ClassMetric) -> Result<Vec<Vec<f64>>> {
    table.validate()?;
    (0..table.classes.len())
        .map(|i| {
            let mut means = Vec::with_capacity(table.models.len());
            let mut cis = Vec::with_capacity(table.models.len());
            for m in &table.models {
                let s = aggregate_folds(m.per_class[i].get(metric)).map_err(|e| {
                    Error::Input(format!("{} / {} / {metric:?}: {e}", m.name, table.classes[i]))
                })?;
                means.push(s.mean);
                cis.push(s.ci_length);
            }
            Ok(scaled_scores(&means, &cis))
        })
        .collect()
}

/// Per-model score: the class-averaged share of each model in every class row.
pub fn rsn_classwise(rs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(n) = rs.first().map(Vec::len) else {
        return Err(Error::Input("empty ranking-score matrix".into()));
    };
    if n == 0 || rs.iter().any(|r| r.len() != n) {
        return Err(Error::Input("ranking-score rows must share a non-zero model count".into()));
    }
    let mut out = vec![0.0; n];
    for row in rs {
        for (o, s) in out.iter_mut().zip(shares(row)) {
            *o += s;
        }
    }
    let m = rs.len() as f64;
    Ok(out.into_iter().map(|v| v / m).collect())
}

pub fn rsn_accuracy(table: &RankingTable) -> Result<Vec<f64>> {
    table.validate()?;
    let mut means = Vec::new();
    let mut cis = Vec::new();
    for m in &table.models {
        let s = aggregate_folds(&m.accuracy).map_err(|e| Error::Input(format!("{} accuracy: {e}", m.name)))?;
        means.push(s.mean);
        cis.push(s.ci_length);
    }
    Ok(shares(&scaled_scores(&means, &cis)))
}

pub fn rsn_fps(fps: &[f64]) -> Result<Vec<f64>> {
    if fps.is_empty() {
        return Err(Error::Input("no FPS values".into()));
    }
    if let Some(bad) = fps.iter().find(|f| !(**f > 0.0 && f.is_finite())) {
        return Err(Error::Input(format!("FPS values must be positive, got {bad}")));
    }
    let total = order_free_sum(fps);
    Ok(fps.iter().map(|f| f / total).collect())
}

/// Weights of the six normalised columns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alpha {
    pub recall: f64,
    pub f1: f64,
    pub precision: f64,
    pub specificity: f64,
    pub accuracy: f64,
    pub fps: f64,
}

impl Default for Alpha {
    fn default() -> Self {
        Self { recall: 1.0, f1: 1.0, precision: 1.0, specificity: 1.0, accuracy: 1.0, fps: 1.0 }
    }
}

impl Alpha {
    fn as_array(&self) -> [f64; 6] {
        [self.recall, self.f1, self.precision, self.specificity, self.accuracy, self.fps]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrsRow {
    pub model: String,
    pub recall: f64,
    pub f1: f64,
    pub precision: f64,
    pub specificity: f64,
    pub accuracy: f64,
    pub fps: f64,
    pub ors: f64,
    /// 1 for the best model.
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrsResult {
    pub alpha: Alpha,
    /// Sorted by descending score; ties broken by model name.
    pub rows: Vec<OrsRow>,
}

impl OrsResult {
    pub fn row(&self, model: &str) -> Option<&OrsRow> {
        self.rows.iter().find(|r| r.model == model)
    }
}

pub fn ors(table: &RankingTable, alpha: Alpha) -> Result<OrsResult> {
    if let Some(a) = alpha.as_array().iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
        return Err(Error::Input(format!("ranking weights must be non-negative, got {a}")));
    }
    table.validate()?;
    let col = |m: ClassMetric| rs_classwise(table, m).and_then(|rs| rsn_classwise(&rs));
    let recall = col(ClassMetric::Recall)?;
    let f1 = col(ClassMetric::F1)?;
    let precision = col(ClassMetric::Precision)?;
    let specificity = col(ClassMetric::Specificity)?;
    let accuracy = rsn_accuracy(table)?;
    let fps = rsn_fps(&table.models.iter().map(|m| m.fps).collect::<Vec<_>>())?;
    let mut rows: Vec<OrsRow> = table
        .models
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let ors = alpha.recall * recall[j]
                + alpha.f1 * f1[j]
                + alpha.precision * precision[j]
                + alpha.specificity * specificity[j]
                + alpha.accuracy * accuracy[j]
                + alpha.fps * fps[j];
            OrsRow {
                model: m.name.clone(),
                recall: recall[j],
                f1: f1[j],
                precision: precision[j],
                specificity: specificity[j],
                accuracy: accuracy[j],
                fps: fps[j],
                ors,
                rank: 0,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.ors.total_cmp(&a.ors).then_with(|| a.model.cmp(&b.model)));
    rows.iter_mut().enumerate().for_each(|(i, r)| r.rank = i + 1);
    Ok(OrsResult { alpha, rows })
}
