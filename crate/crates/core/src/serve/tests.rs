use rand::SeedableRng;

use super::*;
use crate::data::sharpness_threshold;
use crate::data::synth::{render, SynthSpec};
use crate::{ModelConfig, ModelKind, SeededRng};

fn desk() -> (Model<f32>, ClassCatalog) {
    let mut rng = SeededRng::seed_from_u64(8);
    let mut m = Model::build(ModelKind::BestEarNet, ModelConfig::desk(), &mut rng).unwrap();
    m.eval();
    (m, ClassCatalog::default())
}

fn frame(class: usize, seed: u64) -> Vec<u8> {
    let mut rng = SeededRng::seed_from_u64(seed);
    png_bytes(&render(class, 96, &mut rng)).unwrap()
}

#[test]
fn softmax_sums_to_one() {
    let p = softmax(&[1000.0, -1000.0, 3.0, 3.0]);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(p[2], p[3]);
    assert!((p[0] - 1.0).abs() < 1e-12);
}

#[test]
fn frame_prediction_contract() {
    let (m, cat) = desk();
    let bytes = frame(4, 1);
    let a = infer_frame(&m, &cat, &bytes, &InferOptions::default()).unwrap();
    assert_eq!(a.probabilities.len(), 9);
    assert!((a.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    let argmax = (0..9).max_by(|&i, &j| a.probabilities[i].total_cmp(&a.probabilities[j])).unwrap();
    assert_eq!(a.top1_index, argmax);
    assert_eq!(a.top1, cat.names()[argmax]);
    assert!(a.heatmap.is_none());
    assert!(a.latency_ms > 0.0);

    let b = infer_frame(&m, &cat, &bytes, &InferOptions::default()).unwrap();
    assert_eq!(a.probabilities, b.probabilities);

    let with_map = infer_frame(&m, &cat, &bytes, &InferOptions { heatmap: true, ..Default::default() }).unwrap();
    assert_eq!(with_map.probabilities, a.probabilities);
    let png = base64::engine::general_purpose::STANDARD.decode(with_map.heatmap.unwrap()).unwrap();
    let img = image::load_from_memory(&png).unwrap();
    assert_eq!((img.width(), img.height()), (64, 64));
}

#[test]
fn frame_errors_and_gate() {
    let (m, cat) = desk();
    assert!(matches!(infer_frame(&m, &cat, b"not an image", &InferOptions::default()), Err(Error::Decode { .. })));
    assert!(infer_frame(&m, &cat.prefix(3), &frame(0, 0), &InferOptions::default()).is_err());
    let flat = png_bytes(&RgbImage::from_pixel(64, 64, image::Rgb([90, 60, 40]))).unwrap();
    let p = infer_frame(&m, &cat, &flat, &InferOptions { sharpness_gate: 1.0, ..Default::default() }).unwrap();
    assert!(p.blurry);
    assert_eq!(p.sharpness, 0.0);
    let p = infer_frame(&m, &cat, &frame(2, 3), &InferOptions::default()).unwrap();
    assert!(!p.blurry);
}

#[test]
fn gate_matches_synthetic_percentile() {
    let spec = SynthSpec::default();
    let mut scores = Vec::new();
    for class in 0..spec.num_classes {
        let mut rng = SeededRng::seed_from_u64(spec.seed ^ (class as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        for _ in 0..spec.n_per_class {
            scores.push(sharpness(&render(class, spec.image_size, &mut rng)));
        }
    }
    let q10 = sharpness_threshold(&scores, 0.1).unwrap();
    assert!((q10 - DEFAULT_SHARPNESS_GATE).abs() < 1e-9 * q10.max(1.0), "10th percentile is {q10}");
    let below = scores.iter().filter(|&&s| s < DEFAULT_SHARPNESS_GATE).count();
    assert!(below <= scores.len() / 10);
}

fn pred(ts: u64) -> FramePrediction {
    FramePrediction {
        classes: vec!["a".into(), "b".into()],
        probabilities: vec![0.25, 0.75],
        top1: "b".into(),
        top1_index: 1,
        top1_probability: 0.75,
        latency_ms: 1.5,
        sharpness: 10.0,
        blurry: false,
        heatmap: None,
        timestamp_ms: ts,
        session: Some("s1".into()),
    }
}

#[test]
fn session_ids() {
    for ok in ["abc", "A-1_b", &"x".repeat(64)] {
        assert!(validate_session_id(ok).is_ok(), "{ok}");
    }
    for bad in ["", "../etc", "a b", "a/b", &"x".repeat(65)] {
        assert!(validate_session_id(bad).is_err(), "{bad}");
    }
}

#[test]
fn session_log_appends_and_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let log = SessionLog::open(dir.path(), "s1").unwrap();
    log.append(&pred(100)).unwrap();
    let back = log.append(&pred(50)).unwrap();
    assert_eq!(back.timestamp_ms, 100);
    drop(log);

    let log = SessionLog::open(dir.path(), "s1").unwrap();
    log.append(&pred(90)).unwrap();
    log.append(&pred(200)).unwrap();
    let all = read_log(log.path()).unwrap();
    let ts: Vec<u64> = all.iter().map(|p| p.timestamp_ms).collect();
    assert_eq!(ts, vec![100, 100, 100, 200]);
    assert_eq!(all[0], pred(100));

    // Torn tail from an interrupted write.
    let mut f = OpenOptions::new().append(true).open(log.path()).unwrap();
    f.write_all(b"{\"classes\":[\"a\"").unwrap();
    assert_eq!(read_log(log.path()).unwrap().len(), 4);
    assert!(read_log(&dir.path().join("missing.jsonl")).unwrap().is_empty());
    std::fs::write(dir.path().join("bad.jsonl"), "garbage\n{}\n").unwrap();
    assert!(read_log(&dir.path().join("bad.jsonl")).is_err());
}

#[test]
fn latest_slot_drops_oldest() {
    let slot = LatestSlot::new();
    assert!(!slot.put(1));
    assert!(slot.put(2));
    assert!(slot.put(3));
    assert_eq!(slot.take(), Some(3));
    assert_eq!(slot.take(), None);
    assert!(!slot.put(4));
    assert_eq!(slot.dropped(), 2);
}
