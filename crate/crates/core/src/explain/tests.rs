use super::*;
use crate::model::ModelKind;
use crate::ModelConfig;

fn tiny_net(x: [f64; 4], v: [f64; 4], out: usize) -> (Vec<f32>, bool) {
    let mut tape = Tape::<f64>::new();
    let xv = tape.leaf(Tensor::new(vec![1, 1, 2, 2], x.to_vec()).unwrap(), true);
    let act = tape.affine(xv, 2.0, 0.0).unwrap();
    let weights = tape.constant(Tensor::new(vec![1, 1, 2, 2], v.to_vec()).unwrap());
    let prod = tape.mul(act, weights).unwrap();
    let score = tape.sum(prod).unwrap();
    cam_on_tape(&mut tape, act, score, out, out).unwrap()
}

#[test]
fn hand_derived_cam() {
    // A = 2x, score = Σ v·A, so ∂score/∂A = v, the channel weight is mean(v) = 1
    // and the raw map is 2x = [2, 4, 6, 8]; min-max gives [0, 1/3, 2/3, 1].
    let (map, degenerate) = tiny_net([1.0, 2.0, 3.0, 4.0], [1.0, 0.0, 0.0, 3.0], 2);
    assert!(!degenerate);
    for (got, want) in map.iter().zip([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]) {
        assert!((got - want).abs() < 1e-6, "{map:?}");
    }
    // Negative weight: every cell is rectified away.
    let (map, degenerate) = tiny_net([1.0, 2.0, 3.0, 4.0], [-1.0, 0.0, 0.0, -3.0], 2);
    assert!(degenerate);
    assert!(map.iter().all(|&v| v == 0.0));
    // Upsampled to 4×4 the corners keep the extremes.
    let (map, _) = tiny_net([1.0, 2.0, 3.0, 4.0], [1.0, 0.0, 0.0, 3.0], 4);
    assert_eq!(map.len(), 16);
    assert!(map[0].abs() < 1e-6 && (map[15] - 1.0).abs() < 1e-6);
}

#[test]
fn channel_weighting() {
    // Two channels with gradient means 0.5 and -1.
    let act = Tensor::new(vec![1, 2, 1, 2], vec![4.0, 2.0, 1.0, 3.0]).unwrap();
    let grad = Tensor::new(vec![1, 2, 1, 2], vec![1.0, 0.0, -1.0, -1.0]).unwrap();
    let map = cam_map(&act, &grad).unwrap();
    assert_eq!(map, vec![(0.5f64 * 4.0 - 1.0).max(0.0), (0.5f64 * 2.0 - 3.0).max(0.0)]);
    assert!(cam_map(&act, &Tensor::zeros(vec![1, 2, 2, 1])).is_err());
}

fn desk_model(kind: ModelKind) -> Model<f32> {
    let mut rng = SeededRng::seed_from_u64(4);
    let mut m = Model::build(kind, ModelConfig::desk(), &mut rng).unwrap();
    m.eval();
    m
}

fn random_image(seed: u64) -> Tensor<f32> {
    let mut rng = SeededRng::seed_from_u64(seed);
    Tensor::uniform(vec![3, 64, 64], -2.0, 2.0, &mut rng)
}

#[test]
fn heatmap_contract() {
    let model = desk_model(ModelKind::BestEarNet);
    let before = model.params.checksum();
    for seed in 0..3 {
        let h = grad_cam(&model, &random_image(seed), None, TargetLayer::Fusion).unwrap();
        assert_eq!((h.height, h.width, h.values.len()), (64, 64, 64 * 64));
        assert!(h.values.iter().all(|v| (0.0..=1.0).contains(v)));
        if h.degenerate {
            assert_eq!(h.max(), 0.0);
        } else {
            assert_eq!(h.max(), 1.0);
        }
        assert_eq!(h.target_class, model.predict(&random_image(seed).reshape(vec![1, 3, 64, 64]).unwrap()).unwrap()[0]);
    }
    assert_eq!(model.params.checksum(), before);
}

#[test]
fn heatmap_errors() {
    let model = desk_model(ModelKind::BestEarNet);
    let img = random_image(1);
    assert!(matches!(grad_cam(&model, &img, Some(9), TargetLayer::Fusion), Err(Error::Input(_))));
    let mut training = model.clone();
    training.train();
    assert!(matches!(grad_cam(&training, &img, None, TargetLayer::Fusion), Err(Error::Contract(_))));
    let baseline = desk_model(ModelKind::ShuffleNetV2);
    assert!(grad_cam(&baseline, &img, Some(0), TargetLayer::Fhigh).is_err());
    assert!(grad_cam(&baseline, &img, Some(0), TargetLayer::Fusion).is_ok());
    assert!("stage9".parse::<TargetLayer>().is_err());
    assert_eq!("lgsff".parse::<TargetLayer>().unwrap(), TargetLayer::Fusion);
}

/// Map for `target` with the logits passed through `x ↦ scale·x + shift`.
fn transformed_cam(model: &Model<f32>, img: &Tensor<f32>, target: usize, scale: f32, shift: f32) -> Vec<f32> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let xv = tape.leaf(img.clone().reshape(vec![1, 3, 64, 64]).unwrap(), true);
    let mut rng = SeededRng::seed_from_u64(0);
    let out = model.forward(&mut tape, &bound, xv, &mut rng).unwrap();
    let logits = tape.affine(out.logits3, scale, shift).unwrap();
    let logit = tape.narrow(logits, 1, target, 1).unwrap();
    let score = tape.sum(logit).unwrap();
    cam_on_tape(&mut tape, out.lgsff, score, 64, 64).unwrap().0
}

#[test]
fn invariant_to_logit_shift_and_positive_scale() {
    let model = desk_model(ModelKind::BestEarNet);
    let mut rng = SeededRng::seed_from_u64(99);
    for seed in 10..14 {
        let img = random_image(seed);
        let target = (seed as usize) % 9;
        let base = transformed_cam(&model, &img, target, 1.0, 0.0);
        let shift = rand::Rng::random_range(&mut rng, -50.0..50.0f32);
        let scale = rand::Rng::random_range(&mut rng, 0.1..10.0f32);
        for other in [transformed_cam(&model, &img, target, 1.0, shift), transformed_cam(&model, &img, target, scale, 0.0)] {
            let worst = base.iter().zip(&other).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
            assert!(worst < 1e-4, "seed {seed}: {worst}");
        }
        let h = grad_cam(&model, &img, Some(target), TargetLayer::Fusion).unwrap();
        assert_eq!(h.values, base);
    }
}

#[test]
fn overlay_blends() {
    let mut rng = SeededRng::seed_from_u64(3);
    let img = RgbImage::from_fn(8, 6, |_, _| Rgb(rand::Rng::random(&mut rng)));
    let values: Vec<f32> = (0..48).map(|i| i as f32 / 47.0).collect();
    let h = Heatmap { height: 6, width: 8, values, target_class: 0, layer: TargetLayer::Fusion, degenerate: false };
    assert_eq!(overlay(&h, &img, 0.0).unwrap(), img);
    assert_eq!(overlay(&h, &img, 1.0).unwrap(), h.to_image());
    let half = overlay(&h, &img, 0.5).unwrap();
    let heat = h.to_image();
    for (x, y, p) in half.enumerate_pixels() {
        for c in 0..3 {
            let avg = (img.get_pixel(x, y)[c] as f64 + heat.get_pixel(x, y)[c] as f64) / 2.0;
            assert!((p[c] as f64 - avg).abs() <= 0.5, "pixel ({x},{y})");
        }
    }
    assert!(overlay(&h, &img, 1.5).is_err());
    assert!(matches!(overlay(&h, &RgbImage::new(6, 8), 0.5), Err(Error::Shape(_))));
}

#[test]
fn colormap_ends() {
    assert_eq!(colormap(0.0), [0, 64, 255]);
    assert_eq!(colormap(1.0), [255, 64, 0]);
    let mid = colormap(0.5);
    assert!(mid[1] > mid[0] && mid[1] > mid[2]);
}
