use image::Rgb;
use rand::SeedableRng;

use super::*;
use crate::SeededRng;

#[test]
fn catalog_order() {
    let c = ClassCatalog::default();
    assert_eq!(c.names(), EAR_CLASSES);
    assert_eq!(c.id("AOM"), Some(0));
    assert_eq!(c.id("TMC"), Some(8));
    assert!(ClassCatalog::ordered(vec!["a".into(), "a".into()]).is_err());
}

#[test]
fn gray_black_and_identity_resize() {
    let gray = RgbImage::from_pixel(224, 224, Rgb([128, 128, 128]));
    let t = preprocess(&gray, 224);
    let expect = [0.0737, 0.2052, 0.4265];
    for c in 0..3 {
        let v = t.data()[c * 224 * 224 + 5000];
        assert!((v - expect[c]).abs() < 1e-3, "{c}: {v}");
        assert!(t.data()[c * 224 * 224..(c + 1) * 224 * 224].iter().all(|&x| x == v));
    }
    let black = RgbImage::new(50, 30);
    let t = preprocess(&black, 64);
    assert_eq!(t.shape(), [3, 64, 64]);
    for c in 0..3 {
        assert!(t.data()[c * 4096..(c + 1) * 4096].iter().all(|&x| x == -MEAN[c] / STD[c]));
    }
}

#[test]
fn bilinear_cases() {
    let src = [0.0, 1.0, 2.0, 3.0];
    assert_eq!(bilinear_resize(&src, 2, 2, 2, 2), src);
    let up = bilinear_resize(&src, 2, 2, 4, 4);
    assert_eq!(up[0], 0.0);
    assert_eq!(up[15], 3.0);
    assert!((up[1] - 0.25).abs() < 1e-6);
    let c = bilinear_resize(&[5.0; 9], 3, 3, 7, 2);
    assert!(c.iter().all(|&v| (v - 5.0).abs() < 1e-6));
}

#[test]
fn denormalize_round_trip() {
    let mut rng = SeededRng::seed_from_u64(1);
    let img = synth::render(4, 32, &mut rng);
    let back = denormalize(&preprocess(&img, 32)).unwrap();
    for (a, b) in img.pixels().zip(back.pixels()) {
        for c in 0..3 {
            assert!((a.0[c] as i32 - b.0[c] as i32).abs() <= 1);
        }
    }
}

#[test]
fn sharpness_cases() {
    assert_eq!(sharpness(&RgbImage::from_pixel(8, 8, Rgb([90, 90, 90]))), 0.0);
    let checker = RgbImage::from_fn(16, 16, |x, y| if (x / 2 + y / 2) % 2 == 0 { Rgb([255; 3]) } else { Rgb([0; 3]) });
    let blurred = image::imageops::blur(&checker, 1.5);
    assert!(sharpness(&checker) > sharpness(&blurred));

    // 5×5 sample: a ring of 10s around a central 50, zero border.
    let vals = [[0, 0, 0, 0, 0], [0, 10, 10, 10, 0], [0, 10, 50, 10, 0], [0, 10, 10, 10, 0], [0, 0, 0, 0, 0]];
    let img = RgbImage::from_fn(5, 5, |x, y| Rgb([vals[y as usize][x as usize] as u8; 3]));
    // Interior responses by hand:
    // (1,1): 0 + 10 + 0 + 10 − 40 = −20
    // (2,1): 0 + 50 + 10 + 10 − 40 = 30
    // (2,2): 4·10 − 200 = −160
    let r = [-20.0, 30.0, -20.0, 30.0, -160.0, 30.0, -20.0, 30.0, -20.0];
    let mean: f64 = r.iter().sum::<f64>() / 9.0;
    let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9.0;
    assert!((sharpness(&img) - var).abs() < 1e-6 * var);
}

#[test]
fn threshold_percentile() {
    let s: Vec<f64> = (1..=10).map(f64::from).collect();
    assert_eq!(sharpness_threshold(&s, 0.1), Some(1.0));
    assert_eq!(sharpness_threshold(&s, 0.5), Some(5.0));
    assert_eq!(sharpness_threshold(&[], 0.1), None);
}

#[test]
fn scan_layout_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert!(scan_dataset(root).unwrap().records.is_empty());
    for class in ["b", "a"] {
        std::fs::create_dir(root.join(class)).unwrap();
        for i in [2, 0, 1] {
            RgbImage::new(4, 4).save(root.join(class).join(format!("{i}.png"))).unwrap();
        }
    }
    std::fs::write(root.join("a").join("notes.txt"), "x").unwrap();
    std::fs::create_dir(root.join("empty")).unwrap();
    let first = scan_dataset(root).unwrap();
    assert_eq!(first.records.len(), 6);
    assert_eq!(first.catalog.names(), ["a", "b", "empty"]);
    assert_eq!(first.class_counts(), vec![3, 3, 0]);
    assert!(first.records[0].path.ends_with("a/0.png"));
    assert!(first.records[5].path.ends_with("b/2.png"));
    assert_eq!(first, scan_dataset(root).unwrap());

    std::fs::write(root.join("manifest.csv"), "path,class\nb/0.png,zeta\na/1.png,alpha\n").unwrap();
    let m = scan_dataset(root).unwrap();
    assert_eq!(m.catalog.names(), ["zeta", "alpha"]);
    assert_eq!(m.labels(), vec![0, 1]);
}

#[test]
fn corrupt_image_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.png");
    std::fs::write(&p, b"not a png").unwrap();
    let err = decode_image(&p).unwrap_err().to_string();
    assert!(err.contains("bad.png"), "{err}");
}

#[test]
fn synthetic_set_is_balanced_and_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let spec = SynthSpec { n_per_class: 20, image_size: 32, ..SynthSpec::default() };
    let ia = synth_generate(&spec, a.path()).unwrap();
    let ib = synth_generate(&spec, b.path()).unwrap();
    assert_eq!(ia.records.len(), 180);
    assert_eq!(ia.class_counts(), vec![20; 9]);
    for (ra, rb) in ia.records.iter().zip(&ib.records) {
        assert_eq!(std::fs::read(&ra.path).unwrap(), std::fs::read(&rb.path).unwrap());
    }
    assert!(synth_generate(&SynthSpec { n_per_class: 0, ..spec }, a.path()).is_err());
}

#[test]
fn synthetic_classes_beat_a_histogram_centroid_floor() {
    let mut rng = SeededRng::seed_from_u64(5);
    let hist = |img: &RgbImage| {
        let mut h = vec![0.0f64; 24];
        for p in img.pixels() {
            for c in 0..3 {
                h[c * 8 + p.0[c] as usize / 32] += 1.0;
            }
        }
        h
    };
    let per = 30;
    let feats: Vec<Vec<Vec<f64>>> = (0..9).map(|c| (0..per).map(|_| hist(&synth::render(c, 48, &mut rng))).collect()).collect();
    let centroids: Vec<Vec<f64>> = feats
        .iter()
        .map(|fs| (0..24).map(|k| fs[..per / 2].iter().map(|f| f[k]).sum::<f64>() / (per / 2) as f64).collect())
        .collect();
    let mut correct = 0;
    for (c, fs) in feats.iter().enumerate() {
        for f in &fs[per / 2..] {
            let d = |m: &Vec<f64>| m.iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..9).min_by(|&a, &b| d(&centroids[a]).total_cmp(&d(&centroids[b]))).unwrap();
            correct += usize::from(best == c);
        }
    }
    assert!(correct as f64 / (9 * per / 2) as f64 > 2.0 / 9.0);
}

#[test]
fn tensor_dataset_batches_and_subsets() {
    let catalog = ClassCatalog::default().prefix(3);
    let inputs: Vec<f32> = (0..4 * 3 * 4).map(|v| v as f32).collect();
    assert!(TensorDataset::from_parts(catalog.clone(), 2, inputs.clone(), vec![0, 1, 2]).is_err());
    let ds = TensorDataset::from_parts(catalog, 2, inputs, vec![0, 2, 1, 2]).unwrap();
    let (x, y) = ds.batch(&[3, 0]);
    assert_eq!(x.shape(), [2, 3, 2, 2]);
    assert_eq!(x.data()[0], 36.0);
    assert_eq!(y, vec![2, 0]);
    let sub = ds.subset_classes(&[2, 0]).unwrap();
    assert_eq!(sub.labels, vec![1, 0, 0]);
    assert_eq!(sub.catalog.names(), ["CSOM", "AOM"]);
}
