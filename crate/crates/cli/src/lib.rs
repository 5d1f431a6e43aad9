//! The `earnet` command line and the local inference service.

pub mod cli;
pub mod config;
pub mod server;

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use serde::Serialize;
use serde_json::json;

use earnet::data::synth::{synth_generate, SynthSpec};
use earnet::data::{decode_image, denormalize, preprocess, scan_dataset, TensorDataset};
use earnet::explain::{grad_cam, overlay, TargetLayer};
use earnet::metrics::table_io::{self, parse_ranking_csv};
use earnet::metrics::{aggregate_folds, confusion, metrics_from_confusion, ors, Alpha};
use earnet::perf::fps_bench;
use earnet::serve::{infer_frame, InferOptions};
use earnet::train::{cross_validate, evaluate, kfold_split, load_checkpoint, run_fold, FoldJob, TrainConfig};
use earnet::{Model, ModelConfig, ModelKind};

use cli::{BenchArgs, Cli, Command, EvalArgs, GenDataArgs, GlobalOpts, GradcamArgs, InferArgs, RankArgs, TrainArgs};
use config::FileConfig;

fn emit(global: &GlobalOpts, value: &impl Serialize, text: &str) -> Result<()> {
    if global.json {
        println!("{}", serde_json::to_string_pretty(value)?);
    } else {
        print!("{text}");
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.global.config.as_deref())?;
    let g = &cli.global;
    match cli.command {
        Command::GenData(a) => gen_data(g, a),
        Command::Train(a) => train(g, &file, a),
        Command::Eval(a) => eval(g, a),
        Command::Bench(a) => bench(g, &file, a),
        Command::Rank(a) => rank(g, a),
        Command::Infer(a) => infer(g, &file, a),
        Command::Gradcam(a) => gradcam(g, a),
        Command::Serve(a) => server::run(g, &file, a),
    }
}

fn gen_data(g: &GlobalOpts, a: GenDataArgs) -> Result<()> {
    let spec = SynthSpec { n_per_class: a.per_class, num_classes: a.classes, image_size: a.size, seed: g.seed.unwrap_or(SynthSpec::default().seed) };
    let index = synth_generate(&spec, &a.out).with_context(|| format!("generating into {}", a.out.display()))?;
    let counts = index.class_counts();
    let mut text = format!("wrote {} images to {}\n", index.records.len(), a.out.display());
    for (name, n) in index.catalog.names().iter().zip(&counts) {
        let _ = writeln!(text, "  {name:<6} {n}");
    }
    emit(g, &json!({ "out": a.out, "images": index.records.len(), "classes": index.catalog.names(), "counts": counts, "spec": spec }), &text)
}

fn model_config(file: &FileConfig, full_scale: bool) -> ModelConfig {
    file.model.clone().unwrap_or_else(|| if full_scale { ModelConfig::default() } else { ModelConfig::desk() })
}

fn train(g: &GlobalOpts, file: &FileConfig, a: TrainArgs) -> Result<()> {
    let kind: ModelKind = a.kind.into();
    let index = scan_dataset(&a.data)?;
    ensure!(!index.records.is_empty(), "no images found under {}", a.data.display());
    let mut mcfg = model_config(file, a.full_scale);
    mcfg.num_classes = index.catalog.len();
    mcfg.validate()?;
    let mut tcfg = file.train.clone().unwrap_or_else(|| if a.full_scale { TrainConfig::full() } else { TrainConfig::default() });
    if let Some(e) = a.epochs {
        tcfg.epochs = e;
    }
    if let Some(b) = a.batch_size {
        tcfg.batch_size = b;
    }
    if let Some(lr) = a.lr {
        tcfg.lr = lr;
    }
    if let Some(s) = g.seed {
        tcfg.seed = s;
    }
    tcfg.validate()?;
    let data = TensorDataset::from_index(&index, mcfg.input_size)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    log::info!("training {} on {} images, {} classes", kind.name(), data.len(), data.catalog.len());

    let folds = if a.single_split {
        let plan = kfold_split(&data.labels, a.folds, tcfg.seed)?;
        let job = FoldJob { kind, model: &mcfg, train: &tcfg, data: &data, fold_index: 0, fold: &plan.folds[0], run_dir: Some(&a.out) };
        vec![run_fold(&job)?]
    } else {
        cross_validate(kind, &mcfg, &tcfg, &data, a.folds, Some(&a.out))?.folds
    };
    let accs: Vec<f64> = folds.iter().map(|f| f.final_accuracy()).collect();
    let summary = aggregate_folds(&accs).ok();
    let mut text = String::from("fold  val_acc  best_epoch\n");
    for f in &folds {
        let _ = writeln!(text, "{:>4}  {:>7.4}  {:>10}", f.fold, f.final_accuracy(), f.best_epoch);
    }
    if let Some(s) = &summary {
        let _ = writeln!(text, "mean {:.4} ± {:.4} (95% CI {:.4}..{:.4})", s.mean, s.std, s.ci_low, s.ci_high);
    }
    let _ = writeln!(text, "run directory: {}", a.out.display());
    let report = json!({
        "kind": kind,
        "run_dir": a.out,
        "folds": folds.iter().map(|f| json!({ "fold": f.fold, "accuracy": f.final_accuracy(), "best_epoch": f.best_epoch, "initial_accuracy": f.initial_val_acc })).collect::<Vec<_>>(),
        "accuracy": summary,
    });
    emit(g, &report, &text)
}

fn eval(g: &GlobalOpts, a: EvalArgs) -> Result<()> {
    let (model, catalog, manifest) = load_checkpoint(&a.weights)?;
    let index = scan_dataset(&a.data)?;
    ensure!(
        index.catalog.names() == catalog.names(),
        "dataset classes {:?} differ from checkpoint classes {:?}",
        index.catalog.names(),
        catalog.names()
    );
    let data = TensorDataset::from_index(&index, model.config.input_size)?;
    let all: Vec<usize> = (0..data.len()).collect();
    let (loss, preds) = evaluate(&model, &data, &all, 64)?;
    let cm = confusion(&preds, &data.labels, catalog.len())?;
    let m = metrics_from_confusion(&cm)?;
    if let Some(path) = &a.csv {
        let rows = table_io::fold_metrics_csv(manifest.kind.name(), manifest.fold.unwrap_or(0), catalog.names(), &m, true);
        std::fs::write(path, rows).with_context(|| format!("writing {}", path.display()))?;
    }
    let mut text = format!("accuracy {:.4}  loss {:.4}  ({} images)\n", m.accuracy, loss, data.len());
    let _ = writeln!(text, "class   recall  precision  specificity  f1");
    for (name, c) in catalog.names().iter().zip(&m.per_class) {
        let _ = writeln!(text, "{name:<6}  {:>6.4}  {:>9.4}  {:>11.4}  {:.4}", c.recall, c.precision, c.specificity, c.f1);
    }
    emit(g, &json!({ "accuracy": m.accuracy, "loss": loss, "metrics": m, "confusion": cm, "classes": catalog.names() }), &text)
}

fn bench(g: &GlobalOpts, file: &FileConfig, a: BenchArgs) -> Result<()> {
    let mut model: Model<f32> = match &a.weights {
        Some(w) => load_checkpoint(w)?.0,
        None => {
            let mut rng = earnet::seeded_rng(g.seed.unwrap_or(0));
            Model::build(a.kind.into(), model_config(file, !a.desk), &mut rng)?
        }
    };
    model.eval();
    let mut cfg = file.bench.unwrap_or_default();
    if let Some(w) = a.warmup {
        cfg.warmup = w;
    }
    if let Some(n) = a.iterations {
        cfg.iterations = n;
    }
    cfg.heatmap |= a.heatmap;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    let report = fps_bench(&model, &cfg)?;
    if let Some(stem) = &a.out {
        report.persist(stem)?;
        let fps_file = stem.with_extension("fps.csv");
        let rows = format!("{}\n{}", table_io::HEADER.join(","), table_io::fps_row(&report.model, report.avg_fps));
        std::fs::write(&fps_file, rows).with_context(|| format!("writing {}", fps_file.display()))?;
    }
    emit(g, &report, &report.table())
}

/// Concatenates CSV inputs, keeping only the first header line.
fn merged_csv(paths: &[impl AsRef<Path>]) -> Result<String> {
    let mut out = String::new();
    for (i, p) in paths.iter().enumerate() {
        let p = p.as_ref();
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        for (j, line) in text.lines().enumerate() {
            if j == 0 && i > 0 && line.trim_start().starts_with("model") {
                continue;
            }
            out.push_str(line);
            out.push('\n');
        }
    }
    Ok(out)
}

fn rank(g: &GlobalOpts, a: RankArgs) -> Result<()> {
    let text = merged_csv(&a.inputs)?;
    let src = a.inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(" + ");
    let table = parse_ranking_csv(&text, &src)?;
    let alpha = match a.alpha.as_deref() {
        None => Alpha::default(),
        Some([recall, f1, precision, specificity, accuracy, fps]) => {
            Alpha { recall: *recall, f1: *f1, precision: *precision, specificity: *specificity, accuracy: *accuracy, fps: *fps }
        }
        Some(other) => bail!("--alpha needs 6 weights, got {}", other.len()),
    };
    let result = ors(&table, alpha)?;
    if a.csv && !g.json {
        print!("{}", table_io::ranking_csv(&result));
        return Ok(());
    }
    emit(g, &result, &table_io::ranking_text(&result))
}

fn infer(g: &GlobalOpts, file: &FileConfig, a: InferArgs) -> Result<()> {
    let (model, catalog, _) = load_checkpoint(&a.weights)?;
    let bytes = std::fs::read(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    let serve = file.serve.as_ref();
    let mut opts = InferOptions { heatmap: a.heatmap, ..Default::default() };
    if let Some(gate) = a.sharpness_gate.or(serve.and_then(|s| s.sharpness_gate)) {
        opts.sharpness_gate = gate;
    }
    if let Some(alpha) = serve.and_then(|s| s.alpha) {
        opts.alpha = alpha;
    }
    let p = infer_frame(&model, &catalog, &bytes, &opts)?;
    let mut text = String::from("class   probability\n");
    for (name, prob) in p.classes.iter().zip(&p.probabilities) {
        let mark = if *name == p.top1 { " *" } else { "" };
        let _ = writeln!(text, "{name:<6}  {prob:.6}{mark}");
    }
    let _ = writeln!(text, "top-1 {} ({:.4}), {:.2} ms, sharpness {:.1}{}", p.top1, p.top1_probability, p.latency_ms, p.sharpness, if p.blurry { " [blurry]" } else { "" });
    emit(g, &p, &text)
}

fn gradcam(g: &GlobalOpts, a: GradcamArgs) -> Result<()> {
    let (model, catalog, _) = load_checkpoint(&a.weights)?;
    let layer: TargetLayer = a.layer.parse()?;
    let target = match &a.class {
        None => None,
        Some(c) => Some(match (catalog.id(c), c.parse::<usize>()) {
            (Some(id), _) => id,
            (None, Ok(i)) => i,
            _ => bail!("unknown class `{c}`; expected one of {:?}", catalog.names()),
        }),
    };
    let img = decode_image(&a.image)?;
    let s = model.config.input_size;
    let x = preprocess(&img, s);
    let cam = grad_cam(&model, &x, target, layer)?;
    let blended = overlay(&cam, &denormalize(&x)?, a.alpha)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let heat_path = a.out.join("heatmap.png");
    let overlay_path = a.out.join("overlay.png");
    cam.to_image().save(&heat_path).with_context(|| format!("writing {}", heat_path.display()))?;
    blended.save(&overlay_path).with_context(|| format!("writing {}", overlay_path.display()))?;
    let class = catalog.name(cam.target_class).unwrap_or_default();
    let text = format!(
        "class {class} ({}), layer {:?}{}\n  {}\n  {}\n",
        cam.target_class,
        layer,
        if cam.degenerate { ", map is all zero" } else { "" },
        heat_path.display(),
        overlay_path.display()
    );
    emit(g, &json!({ "class": class, "target_class": cam.target_class, "layer": layer, "degenerate": cam.degenerate, "heatmap": heat_path, "overlay": overlay_path }), &text)
}
