use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn earnet() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_earnet"));
    for var in ["EARNET_SEED", "EARNET_CONFIG", "EARNET_JSON", "EARNET_DATA", "EARNET_WEIGHTS", "EARNET_LOG"] {
        c.env_remove(var);
    }
    c
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn earnet");
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout:\n{}\nstderr:\n{}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("not JSON ({e}):\n{}", stdout(out)))
}

fn first_png(dir: &Path) -> PathBuf {
    let mut stack = vec![dir.to_path_buf()];
    let mut found = Vec::new();
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "png") {
                found.push(p);
            }
        }
    }
    found.sort();
    found.into_iter().next().expect("a png in the dataset")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

#[test]
fn pipeline_from_data_to_heatmap() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let runs = tmp.path().join("run");

    let out = run(earnet().args(["--json", "gen-data", "--per-class", "10", "--out"]).arg(&data));
    let v = json(&out);
    assert_eq!(v["images"], 90);
    assert_eq!(v["classes"].as_array().unwrap().len(), 9);

    let out = run(earnet()
        .args(["--json", "--seed", "3", "train", "--single-split", "--epochs", "1", "--batch-size", "16", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(&runs));
    let v = json(&out);
    assert_eq!(v["folds"].as_array().unwrap().len(), 1);
    let weights = runs.join("fold0").join("best.benw");
    for f in ["config.json", "epochs.csv", "best.benw", "final.benw", "metrics.csv"] {
        assert!(runs.join("fold0").join(f).is_file(), "missing fold0/{f}");
    }

    let csv = tmp.path().join("eval.csv");
    let out = run(earnet().args(["--json", "eval", "--weights"]).arg(&weights).arg("--data").arg(&data).arg("--csv").arg(&csv));
    let v = json(&out);
    let acc = v["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    let rows = std::fs::read_to_string(&csv).unwrap();
    assert!(rows.starts_with("model,fold,class,recall,precision,specificity,f1"));
    assert_eq!(rows.lines().count(), 1 + 9 + 1, "header, 9 classes, overall accuracy:\n{rows}");

    let image = first_png(&data);
    let out = run(earnet().args(["infer", "--weights"]).arg(&weights).arg(&image));
    let text = stdout(&out);
    let table: Vec<&str> = text.lines().skip(1).take(9).collect();
    assert_eq!(table.len(), 9);
    assert_eq!(table.iter().filter(|l| l.ends_with(" *")).count(), 1, "{text}");
    let total: f64 = table.iter().map(|l| l.split_whitespace().nth(1).unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-5, "{text}");

    let out = run(earnet().args(["--json", "infer", "--heatmap", "--weights"]).arg(&weights).arg(&image));
    let v = json(&out);
    assert!(v["heatmap"].as_str().is_some_and(|s| !s.is_empty()));

    let cams = tmp.path().join("cam");
    let out = run(earnet().args(["--json", "gradcam", "--class", "1", "--weights"]).arg(&weights).arg(&image).arg("--out").arg(&cams));
    let v = json(&out);
    assert_eq!(v["target_class"], 1);
    for f in ["heatmap.png", "overlay.png"] {
        let img = image::open(cams.join(f)).unwrap();
        assert_eq!((img.width(), img.height()), (64, 64));
    }

    let stem = tmp.path().join("bench");
    let out = run(earnet()
        .args(["--json", "bench", "--warmup", "1", "--iterations", "5", "--weights"])
        .arg(&weights)
        .arg("--out")
        .arg(&stem));
    let v = json(&out);
    assert_eq!(v["iterations"], 5);
    assert!(v["avg_fps"].as_f64().unwrap() > 0.0);
    assert!(stem.with_extension("json").is_file());
    assert!(stem.with_extension("csv").is_file());
    let fps = std::fs::read_to_string(stem.with_extension("fps.csv")).unwrap();
    assert!(fps.lines().nth(1).unwrap().contains(",_fps_,"), "{fps}");
}

#[test]
fn rank_reproduces_fps_share_of_published_table() {
    let out = run(earnet().args(["--json", "rank"]).arg(fixture("published_comparison.csv")));
    let v = json(&out);
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 17);
    let best = rows.iter().find(|r| r["model"] == "Best-EarNet").unwrap();
    let fps = best["fps"].as_f64().unwrap();
    assert!((fps - 80.0 / 455.0).abs() < 1e-12, "fps share {fps}");
    let total: f64 = rows.iter().map(|r| r["fps"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
    let ranks: Vec<u64> = rows.iter().map(|r| r["rank"].as_u64().unwrap()).collect();
    assert_eq!(ranks, (1..=17).collect::<Vec<_>>());
    assert_eq!(rows[0]["model"], "Best-EarNet");
}

#[test]
fn rank_alpha_weights_and_csv_output() {
    let out = run(earnet().args(["--json", "rank", "--alpha", "0,0,0,0,0,1"]).arg(fixture("published_comparison.csv")));
    let v = json(&out);
    let best = &v["rows"][0];
    assert_eq!(best["model"], "Best-EarNet");
    assert!((best["ors"].as_f64().unwrap() - 80.0 / 455.0).abs() < 1e-12);

    let out = run(earnet().args(["rank", "--csv"]).arg(fixture("published_comparison.csv")));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 18, "{text}");

    let out = earnet().args(["rank", "--alpha", "1,1,1"]).arg(fixture("published_comparison.csv")).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn unknown_flag_prints_usage_and_fails() {
    let out = earnet().args(["train", "--no-such-flag"]).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage"), "{err}");
    assert!(err.contains("--no-such-flag"), "{err}");
}

#[test]
fn missing_checkpoint_is_a_readable_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = earnet().args(["infer", "--weights"]).arg(tmp.path().join("nope.benw")).arg(tmp.path().join("x.png")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:"), "{err}");
    assert!(err.contains("nope"), "{err}");
}

#[test]
fn config_file_env_and_flags_layer() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{ "bench": { "warmup": 1, "iterations": 3 } }"#).unwrap();

    let out = run(earnet().args(["bench", "--desk", "--config"]).arg(&cfg).env("EARNET_JSON", "1"));
    let v = json(&out);
    assert_eq!(v["iterations"], 3);
    assert_eq!(v["warmup"], 1);
    assert_eq!(v["params"], 57_507);

    let out = run(earnet().args(["--json", "bench", "--desk", "--iterations", "4"]).env("EARNET_CONFIG", &cfg));
    let v = json(&out);
    assert_eq!(v["iterations"], 4);
    assert_eq!(v["warmup"], 1);

    std::fs::write(&cfg, r#"{ "bench": { "warmup": 1 }, "typo": 1 }"#).unwrap();
    let out = earnet().args(["bench", "--desk", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("typo"));
}

#[test]
fn seed_makes_generated_data_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run(earnet().args(["gen-data", "--per-class", "2", "--classes", "3", "--out"]).arg(&a).env("EARNET_SEED", "11"));
    run(earnet().args(["--seed", "11", "gen-data", "--per-class", "2", "--classes", "3", "--out"]).arg(&b));
    let pa = first_png(&a);
    let pb = b.join(pa.strip_prefix(&a).unwrap());
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
}

#[test]
fn serve_refuses_to_start_without_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let out = earnet().args(["serve", "--port", "0", "--weights"]).arg(tmp.path().join("missing.benw")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("refusing to start"));
}
