//! Multi-head training with Adam and stratified k-fold cross-validation.

mod optim;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::{ClassCatalog, TensorDataset};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_folds, confusion, metrics_from_confusion, table_io, ConfusionMatrix, FoldSummary, MetricSet};
use crate::model::{load_weights, save_weights, ForwardOutput, Model, ModelConfig, ModelKind};
use crate::tensor::{Float, Tape, Var};
use crate::SeededRng;

pub use optim::Adam;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Weights of the stage-2 and stage-3 auxiliary losses.
    pub aux_weights: (f64, f64),
}

impl Default for TrainConfig {
    /// Desk scale: 15 epochs of batch 32.
    fn default() -> Self {
        Self { epochs: 15, batch_size: 32, lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, seed: 0, aux_weights: (1.0, 1.0) }
    }
}

impl TrainConfig {
    /// The published schedule: 100 epochs of batch 128.
    pub fn full() -> Self {
        Self { epochs: 100, batch_size: 128, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch size must be at least 2 for batch norm, got {}", self.batch_size)));
        }
        if self.aux_weights.0 < 0.0 || self.aux_weights.1 < 0.0 {
            return Err(Error::Config("auxiliary loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// `CE(logits3) + w1·CE(logits1) + w2·CE(logits2)`. Zero-weight terms are
/// left out entirely.
pub fn total_loss<T: Float>(tape: &mut Tape<T>, out: &ForwardOutput<T>, targets: &[usize], aux: (f64, f64)) -> Result<Var> {
    let mut loss = tape.softmax_cross_entropy(out.logits3, targets)?;
    for (logits, w, name) in [(out.logits1, aux.0, "stage-2"), (out.logits2, aux.1, "stage-3")] {
        if w == 0.0 {
            continue;
        }
        let logits = logits.ok_or_else(|| Error::Contract(format!("{name} auxiliary logits missing for weight {w}")))?;
        let ce = tape.softmax_cross_entropy(logits, targets)?;
        let scaled = tape.affine(ce, T::lit(w), T::zero())?;
        loss = tape.add(loss, scaled)?;
    }
    Ok(loss)
}

/// File name of the run manifest written next to checkpoints.
pub const MANIFEST_FILE: &str = "config.json";

/// What a checkpoint needs to be rebuilt: architecture, configuration and
/// class order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: ModelKind,
    pub model: ModelConfig,
    pub classes: Vec<String>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub fold: Option<usize>,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &serde_json::to_string_pretty(self).expect("serialisable"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Builds the model, loads `weights` into it and switches to eval mode.
    pub fn load_model(&self, weights: &Path) -> Result<(Model<f32>, ClassCatalog)> {
        if self.classes.len() != self.model.num_classes {
            return Err(Error::Config(format!("{} class names for {} outputs", self.classes.len(), self.model.num_classes)));
        }
        let mut rng = SeededRng::seed_from_u64(0);
        let mut model = Model::build(self.kind, self.model.clone(), &mut rng)?;
        load_weights(&mut model, weights)?;
        model.eval();
        Ok((model, ClassCatalog::ordered(self.classes.clone())?))
    }
}

/// Loads a checkpoint using the manifest in the same directory.
pub fn load_checkpoint(weights: &Path) -> Result<(Model<f32>, ClassCatalog, RunManifest)> {
    if !weights.is_file() {
        return Err(Error::Input(format!("checkpoint {} does not exist", weights.display())));
    }
    let manifest_path = weights.parent().unwrap_or(Path::new(".")).join(MANIFEST_FILE);
    let manifest = RunManifest::load(&manifest_path)?;
    let (model, catalog) = manifest.load_model(weights)?;
    Ok((model, catalog, manifest))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub stratified: bool,
    pub folds: Vec<Fold>,
}

/// Stratified split: each class is shuffled and dealt round-robin over the
/// folds, continuing where the previous class stopped so fold sizes stay even.
pub fn kfold_split(labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    labels.iter().enumerate().for_each(|(i, &l)| by_class[l].push(i));
    let short: Vec<String> =
        by_class.iter().enumerate().filter(|(_, v)| v.len() < k).map(|(c, v)| format!("class {c} ({} samples)", v.len())).collect();
    if !short.is_empty() {
        return Err(Error::Input(format!("fewer than {k} samples in: {}", short.join(", "))));
    }
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut val: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut next = 0;
    for members in &mut by_class {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            val[next].push(i);
            next = (next + 1) % k;
        }
    }
    let folds = (0..k)
        .map(|f| {
            let mut v = val[f].clone();
            v.sort_unstable();
            let mut train: Vec<usize> = (0..k).filter(|&g| g != f).flat_map(|g| val[g].iter().copied()).collect();
            train.sort_unstable();
            Fold { train, val: v }
        })
        .collect();
    Ok(FoldPlan { k, stratified: true, folds })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldRun {
    pub fold: usize,
    /// Validation accuracy of the untrained network.
    pub initial_val_acc: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Metrics of the final-epoch model on the validation split.
    pub metrics: MetricSet,
    pub confusion: ConfusionMatrix,
    pub checksum: u32,
}

impl FoldRun {
    pub fn final_accuracy(&self) -> f64 {
        self.metrics.accuracy
    }
}

/// Mean CE of the prediction head and arg-max predictions, in eval mode.
pub fn evaluate<T: Float>(model: &Model<T>, data: &TensorDataset, indices: &[usize], batch: usize) -> Result<(f64, Vec<usize>)> {
    let mut eval = model.clone();
    eval.eval();
    let mut total = 0.0;
    let mut preds = Vec::with_capacity(indices.len());
    let mut rng = SeededRng::seed_from_u64(0);
    for chunk in indices.chunks(batch.max(1)) {
        let (x, y) = data.batch(chunk);
        let mut tape = Tape::new();
        let bound = eval.bind(&mut tape, false);
        let xv = tape.constant(x.cast());
        let out = eval.forward(&mut tape, &bound, xv, &mut rng)?;
        let ce = tape.softmax_cross_entropy(out.logits3, &y)?;
        total += tape.value(ce).data()[0].as_f64() * chunk.len() as f64;
        preds.extend(tape.value(out.logits3).argmax_rows());
    }
    Ok((total / indices.len().max(1) as f64, preds))
}

/// Everything needed to train one model on one split.
pub struct FoldJob<'a> {
    pub kind: ModelKind,
    pub model: &'a ModelConfig,
    pub train: &'a TrainConfig,
    pub data: &'a TensorDataset,
    pub fold_index: usize,
    pub fold: &'a Fold,
    pub run_dir: Option<&'a Path>,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Trains from scratch on the train split and evaluates on the val split.
/// With a run directory, writes the config snapshot, per-epoch CSV, the
/// best-validation checkpoint and the final per-class metrics.
pub fn run_fold(job: &FoldJob<'_>) -> Result<FoldRun> {
    let tc = job.train;
    tc.validate()?;
    if job.model.num_classes != job.data.catalog.len() || job.model.input_size != job.data.input_size {
        return Err(Error::Config(format!(
            "model expects {} classes at {}px, data has {} classes at {}px",
            job.model.num_classes,
            job.model.input_size,
            job.data.catalog.len(),
            job.data.input_size
        )));
    }
    let fold_seed = tc.seed.wrapping_add(job.fold_index as u64);
    let mut rng = SeededRng::seed_from_u64(fold_seed);
    let mut model: Model<f32> = Model::build(job.kind, job.model.clone(), &mut rng)?;
    let aux = if job.kind == ModelKind::BestEarNet { tc.aux_weights } else { (0.0, 0.0) };
    let dir = job.run_dir.map(|d| d.join(format!("fold{}", job.fold_index)));
    if let Some(d) = &dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        let manifest = RunManifest {
            kind: job.kind,
            model: job.model.clone(),
            classes: job.data.catalog.names().to_vec(),
            train: Some(tc.clone()),
            fold: Some(job.fold_index),
        };
        manifest.save(&d.join(MANIFEST_FILE))?;
    }
    let eval_batch = 64;
    let (_, preds0) = evaluate(&model, job.data, &job.fold.val, eval_batch)?;
    let initial_val_acc = accuracy(&preds0, job.fold.val.iter().map(|&i| job.data.labels[i]));

    let mut adam = Adam::new(&model.params, tc.lr, tc.beta1, tc.beta2, tc.eps);
    let mut order = job.fold.train.clone();
    let mut epochs = Vec::with_capacity(tc.epochs);
    let mut csv = String::from("epoch,train_loss,val_loss,val_acc\n");
    let mut best = (0usize, f64::NEG_INFINITY);
    for epoch in 1..=tc.epochs {
        model.train();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(tc.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let (x, y) = job.data.batch(chunk);
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, true);
            let xv = tape.constant(x);
            let out = model.forward(&mut tape, &bound, xv, &mut rng)?;
            let loss = total_loss(&mut tape, &out, &y, aux)?;
            let lv = tape.value(loss).data()[0] as f64;
            if !lv.is_finite() {
                return Err(Error::Diverged(format!("fold {} epoch {epoch}: loss is {lv}", job.fold_index)));
            }
            tape.backward(loss)?;
            adam.step(&mut model.params, bound.trainable().map(|(i, v)| (i, tape.grad(v))))?;
            model.apply_bn_updates(&out.bn_updates);
            sum += lv * chunk.len() as f64;
            seen += chunk.len();
        }
        let (val_loss, preds) = evaluate(&model, job.data, &job.fold.val, eval_batch)?;
        let val_acc = accuracy(&preds, job.fold.val.iter().map(|&i| job.data.labels[i]));
        let rec = EpochRecord { epoch, train_loss: sum / seen.max(1) as f64, val_loss, val_acc };
        let _ = writeln!(csv, "{},{},{},{}", rec.epoch, rec.train_loss, rec.val_loss, rec.val_acc);
        log::info!("fold {} epoch {epoch}: loss {:.4} val_loss {:.4} val_acc {:.4}", job.fold_index, rec.train_loss, val_loss, val_acc);
        if val_acc > best.1 {
            best = (epoch, val_acc);
            if let Some(d) = &dir {
                let mut frozen = model.clone();
                frozen.eval();
                save_weights(&frozen, d.join("best.benw"))?;
            }
        }
        if let Some(d) = &dir {
            write_file(&d.join("epochs.csv"), &csv)?;
        }
        epochs.push(rec);
    }
    model.eval();
    let (_, preds) = evaluate(&model, job.data, &job.fold.val, eval_batch)?;
    let targets: Vec<usize> = job.fold.val.iter().map(|&i| job.data.labels[i]).collect();
    let cm = confusion(&preds, &targets, job.data.catalog.len())?;
    let metrics = metrics_from_confusion(&cm)?;
    if let Some(d) = &dir {
        let rows = table_io::fold_metrics_csv(job.kind.name(), job.fold_index, job.data.catalog.names(), &metrics, true);
        write_file(&d.join("metrics.csv"), &rows)?;
        save_weights(&model, d.join("final.benw"))?;
    }
    Ok(FoldRun {
        fold: job.fold_index,
        initial_val_acc,
        epochs,
        best_epoch: best.0,
        metrics,
        confusion: cm,
        checksum: model.params.checksum(),
    })
}

fn accuracy(preds: &[usize], targets: impl Iterator<Item = usize>) -> f64 {
    let mut n = 0;
    let hits = preds.iter().zip(targets).filter(|(p, t)| {
        n += 1;
        **p == *t
    });
    let hits = hits.count();
    if n == 0 {
        0.0
    } else {
        hits as f64 / n as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub kind: ModelKind,
    pub plan: FoldPlan,
    pub folds: Vec<FoldRun>,
    pub accuracy: FoldSummary,
    pub run_dir: Option<PathBuf>,
}

impl CrossValReport {
    /// Per-fold rows in the ranking input schema (no FPS row).
    pub fn metrics_csv(&self, classes: &[String]) -> String {
        self.folds
            .iter()
            .enumerate()
            .map(|(i, f)| table_io::fold_metrics_csv(self.kind.name(), f.fold, classes, &f.metrics, i == 0))
            .collect()
    }
}

pub fn cross_validate(
    kind: ModelKind,
    model: &ModelConfig,
    train: &TrainConfig,
    data: &TensorDataset,
    k: usize,
    run_dir: Option<&Path>,
) -> Result<CrossValReport> {
    let plan = kfold_split(&data.labels, k, train.seed)?;
    let mut folds = Vec::with_capacity(k);
    for (i, fold) in plan.folds.iter().enumerate() {
        folds.push(run_fold(&FoldJob { kind, model, train, data, fold_index: i, fold, run_dir })?);
    }
    let accs: Vec<f64> = folds.iter().map(FoldRun::final_accuracy).collect();
    let report = CrossValReport { kind, plan, folds, accuracy: aggregate_folds(&accs)?, run_dir: run_dir.map(Path::to_path_buf) };
    if let Some(d) = run_dir {
        write_file(&d.join("metrics.csv"), &report.metrics_csv(data.catalog.names()))?;
        write_file(&d.join("report.json"), &serde_json::to_string_pretty(&report).expect("serialisable"))?;
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtensionRun {
    pub classes: Vec<String>,
    pub accuracy: f64,
}

/// Trains on `repeats` random subsets of `n` classes, each on the first fold
/// of a stratified 5-way split, and reports each run's validation accuracy.
/// Epochs are scaled by `available / n` so every run takes about as many
/// optimizer steps as a run on all classes.
pub fn class_extension_run(
    kind: ModelKind,
    model: &ModelConfig,
    train: &TrainConfig,
    data: &TensorDataset,
    n: usize,
    repeats: usize,
) -> Result<Vec<ExtensionRun>> {
    let available = data.catalog.len();
    if n < 2 || n > available {
        return Err(Error::Input(format!("subset size {n} outside 2..={available}")));
    }
    let mut rng = SeededRng::seed_from_u64(train.seed ^ 0xC1A5_5E7E);
    let mut runs = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let mut classes: Vec<usize> = (0..available).collect();
        classes.shuffle(&mut rng);
        classes.truncate(n);
        classes.sort_unstable();
        let subset = data.subset_classes(&classes)?;
        let cfg = ModelConfig { num_classes: n, ..model.clone() };
        let epochs = (train.epochs * available).div_ceil(n);
        let tc = TrainConfig { seed: train.seed.wrapping_add(1000 * (r as u64 + 1)), epochs, ..train.clone() };
        let plan = kfold_split(&subset.labels, 5, tc.seed)?;
        let run = run_fold(&FoldJob { kind, model: &cfg, train: &tc, data: &subset, fold_index: 0, fold: &plan.folds[0], run_dir: None })?;
        runs.push(ExtensionRun { classes: subset.catalog.names().to_vec(), accuracy: run.final_accuracy() });
    }
    Ok(runs)
}
