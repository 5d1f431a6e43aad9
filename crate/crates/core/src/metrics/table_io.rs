//! CSV reading and writing for ranking tables and ranking results.
//!
//! Input rows: `model,fold,class,recall,precision,specificity,f1`, per-model
//! `model,fold,_overall_,accuracy` rows, and one `model,_fps_,<fps>` row per
//! model. A header line is required.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use indexmap::IndexMap;

use super::{ClassFolds, MetricSet, OrsResult, RankingTable};
use crate::error::{Error, Result};
use crate::metrics::ModelEntry;

pub const OVERALL: &str = "_overall_";
pub const FPS: &str = "_fps_";
pub const HEADER: [&str; 7] = ["model", "fold", "class", "recall", "precision", "specificity", "f1"];

#[derive(Default)]
struct Collect {
    /// fold → class → [recall, precision, specificity, f1]
    folds: BTreeMap<u32, IndexMap<String, [f64; 4]>>,
    accuracy: BTreeMap<u32, f64>,
    fps: Option<f64>,
}

fn num(field: &str, what: &str, line: u64, src: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Csv { path: src.into(), msg: format!("line {line}: {what} `{field}` is not a number") })
}

/// Parses a ranking table from CSV text; `src` names the input in errors.
pub fn parse_ranking_csv(text: &str, src: &str) -> Result<RankingTable> {
    let bad = |line: u64, msg: String| Error::Csv { path: src.into(), msg: format!("line {line}: {msg}") };
    let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    if header.get(0) != Some("model") {
        return Err(bad(1, format!("header must start with `model`, got {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut models: IndexMap<String, Collect> = IndexMap::new();
    let mut classes: Vec<String> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(0, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let f: Vec<&str> = rec.iter().collect();
        let Some(&name) = f.first().filter(|n| !n.is_empty()) else {
            return Err(bad(line, "missing model name".into()));
        };
        let entry = models.entry(name.to_string()).or_default();
        if f.get(1) == Some(&FPS) {
            let v = f.get(2).ok_or_else(|| bad(line, "FPS row lacks a value".into()))?;
            if entry.fps.replace(num(v, "fps", line, src)?).is_some() {
                return Err(bad(line, format!("duplicate FPS row for {name}")));
            }
            continue;
        }
        let fold: u32 = f
            .get(1)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(line, format!("fold `{}` is not an integer", f.get(1).unwrap_or(&""))))?;
        let class = *f.get(2).ok_or_else(|| bad(line, "missing class column".into()))?;
        if class == OVERALL {
            let v = f.get(3).ok_or_else(|| bad(line, "overall row lacks accuracy".into()))?;
            entry.accuracy.insert(fold, num(v, "accuracy", line, src)?);
            continue;
        }
        if f.len() < 7 {
            return Err(bad(line, format!("expected 7 fields, got {}", f.len())));
        }
        let mut vals = [0.0; 4];
        for (k, v) in vals.iter_mut().enumerate() {
            *v = num(f[3 + k], HEADER[3 + k], line, src)?;
        }
        if !classes.iter().any(|c| c == class) {
            classes.push(class.to_string());
        }
        if entry.folds.entry(fold).or_default().insert(class.to_string(), vals).is_some() {
            return Err(bad(line, format!("duplicate row for {name}, fold {fold}, class {class}")));
        }
    }
    let mut out = Vec::with_capacity(models.len());
    for (name, c) in models {
        let fps = c.fps.ok_or_else(|| Error::Csv { path: src.into(), msg: format!("model {name} has no {FPS} row") })?;
        let mut per_class = vec![ClassFolds::default(); classes.len()];
        for (fold, rows) in &c.folds {
            for (i, class) in classes.iter().enumerate() {
                let v = rows.get(class).ok_or_else(|| Error::Csv {
                    path: src.into(),
                    msg: format!("model {name}, fold {fold} is missing class {class}"),
                })?;
                let pc = &mut per_class[i];
                pc.recall.push(v[0]);
                pc.precision.push(v[1]);
                pc.specificity.push(v[2]);
                pc.f1.push(v[3]);
            }
        }
        out.push(ModelEntry { name, per_class, accuracy: c.accuracy.into_values().collect(), fps });
    }
    Ok(RankingTable { classes, models: out })
}

pub fn read_ranking_csv(path: &Path) -> Result<RankingTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ranking_csv(&text, &path.display().to_string())
}

/// Rows for one fold of one model, in the ranking input schema.
pub fn fold_metrics_csv(model: &str, fold: usize, classes: &[String], m: &MetricSet, with_header: bool) -> String {
    let mut s = String::new();
    if with_header {
        s.push_str(&HEADER.join(","));
        s.push('\n');
    }
    for (name, c) in classes.iter().zip(&m.per_class) {
        let _ = writeln!(s, "{model},{fold},{name},{},{},{},{}", c.recall, c.precision, c.specificity, c.f1);
    }
    let _ = writeln!(s, "{model},{fold},{OVERALL},{}", m.accuracy);
    s
}

pub fn fps_row(model: &str, fps: f64) -> String {
    format!("{model},{FPS},{fps}\n")
}

pub fn ranking_csv(result: &OrsResult) -> String {
    let mut s = String::from("model,R_rsn,F1_rsn,P_rsn,S_rsn,A_rsn,FPS_rsn,ORS,rank\n");
    for r in &result.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.model, r.recall, r.f1, r.precision, r.specificity, r.accuracy, r.fps, r.ors, r.rank
        );
    }
    s
}

pub fn ranking_text(result: &OrsResult) -> String {
    let width = result.rows.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
    let mut s = format!(
        "{:>4}  {:<width$}  {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}  {:>7}\n",
        "rank", "model", "R", "F1", "P", "S", "A", "FPS", "ORS"
    );
    for r in &result.rows {
        let _ = writeln!(
            s,
            "{:>4}  {:<width$}  {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4}  {:>7.4}",
            r.rank, r.model, r.recall, r.f1, r.precision, r.specificity, r.accuracy, r.fps, r.ors
        );
    }
    s
}
