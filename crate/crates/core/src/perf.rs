//! Batch-1 throughput measurement and parameter counting.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{grad_cam, TargetLayer};
use crate::model::{Mode, Model};
use crate::tensor::{Float, Tensor};
use crate::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub warmup: usize,
    pub iterations: usize,
    /// Time Grad-CAM along with the forward pass.
    pub heatmap: bool,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { warmup: 50, iterations: 500, heatmap: false, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model: String,
    pub avg_fps: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub warmup: usize,
    pub iterations: usize,
    pub heatmap: bool,
    pub threads: usize,
    pub input_shape: Vec<usize>,
    pub params: usize,
    pub cpu: String,
    pub timestamp: u64,
}

/// Trainable scalars; batch-norm running statistics are not counted.
pub fn count_params<T: Float>(model: &Model<T>) -> usize {
    model.parameter_count()
}

fn cpu_model() -> String {
    std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| s.lines().find(|l| l.starts_with("model name")).and_then(|l| l.split(':').nth(1)).map(|m| m.trim().to_string()))
        .unwrap_or_else(|| std::env::consts::ARCH.to_string())
}

/// Nearest-rank percentile of sorted samples.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (q / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Times `iterations` single-image passes on one reused random input after
/// `warmup` untimed ones. The calling thread does all the work.
pub fn fps_bench<T: Float>(model: &Model<T>, cfg: &BenchConfig) -> Result<BenchReport> {
    if model.mode != Mode::Eval {
        return Err(Error::Contract("benchmark needs an eval-mode model".into()));
    }
    if cfg.iterations == 0 {
        return Err(Error::Config("iterations must be at least 1".into()));
    }
    let s = model.config.input_size;
    let shape = vec![1, 3, s, s];
    let mut rng = SeededRng::seed_from_u64(cfg.seed);
    let input: Tensor<T> = Tensor::uniform(shape.clone(), -1.0, 1.0, &mut rng);
    let run = |x: &Tensor<T>| -> Result<()> {
        if cfg.heatmap {
            grad_cam(model, x, None, TargetLayer::Fusion)?;
        } else {
            model.logits(x)?;
        }
        Ok(())
    };
    for _ in 0..cfg.warmup {
        run(&input)?;
    }
    let mut laps = Vec::with_capacity(cfg.iterations);
    let start = Instant::now();
    for _ in 0..cfg.iterations {
        let t = Instant::now();
        run(&input)?;
        laps.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let total = start.elapsed().as_secs_f64();
    laps.sort_by(f64::total_cmp);
    Ok(BenchReport {
        model: model.kind.name().to_string(),
        avg_fps: cfg.iterations as f64 / total,
        p50_ms: percentile(&laps, 50.0),
        p95_ms: percentile(&laps, 95.0),
        p99_ms: percentile(&laps, 99.0),
        warmup: cfg.warmup,
        iterations: cfg.iterations,
        heatmap: cfg.heatmap,
        threads: 1,
        input_shape: shape,
        params: count_params(model),
        cpu: cpu_model(),
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    })
}

impl BenchReport {
    pub const CSV_HEADER: &'static str = "model,avg_fps,p50_ms,p95_ms,p99_ms,warmup,iterations,heatmap,threads,input_shape,params,cpu,timestamp";

    pub fn csv_row(&self) -> String {
        let shape = self.input_shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
        format!(
            "{},{:.3},{:.3},{:.3},{:.3},{},{},{},{},{},{},\"{}\",{}",
            self.model,
            self.avg_fps,
            self.p50_ms,
            self.p95_ms,
            self.p99_ms,
            self.warmup,
            self.iterations,
            self.heatmap,
            self.threads,
            shape,
            self.params,
            self.cpu.replace('"', "'"),
            self.timestamp
        )
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model       {}", self.model);
        let _ = writeln!(s, "params      {}", self.params);
        let _ = writeln!(s, "input       {:?}", self.input_shape);
        let _ = writeln!(s, "heatmap     {}", self.heatmap);
        let _ = writeln!(s, "avg fps     {:.2}", self.avg_fps);
        let _ = writeln!(s, "p50/95/99   {:.3} / {:.3} / {:.3} ms", self.p50_ms, self.p95_ms, self.p99_ms);
        let _ = writeln!(s, "iterations  {} (+{} warmup), {} thread", self.iterations, self.warmup, self.threads);
        let _ = writeln!(s, "cpu         {}", self.cpu);
        s
    }

    /// Writes `<stem>.json` and `<stem>.csv`.
    pub fn persist(&self, stem: &Path) -> Result<()> {
        let json = stem.with_extension("json");
        std::fs::write(&json, serde_json::to_string_pretty(self).expect("serialisable")).map_err(|e| Error::io(&json, e))?;
        let csv = stem.with_extension("csv");
        std::fs::write(&csv, format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row())).map_err(|e| Error::io(&csv, e))
    }
}
