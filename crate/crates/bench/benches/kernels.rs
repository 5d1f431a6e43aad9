use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use earnet::metrics::{ors, Alpha, ClassFolds, ModelEntry, RankingTable};
use earnet::nn::ConvSpec;
use earnet::{seeded_rng, Tape, Tensor};
use rand::Rng;

fn conv(c: &mut Criterion) {
    let mut rng = seeded_rng(0);
    let x: Tensor<f32> = Tensor::uniform(vec![1, 48, 28, 28], -1.0, 1.0, &mut rng);
    let w_dense: Tensor<f32> = Tensor::uniform(vec![48, 48, 1, 1], -0.1, 0.1, &mut rng);
    let w_depth: Tensor<f32> = Tensor::uniform(vec![48, 1, 3, 3], -0.1, 0.1, &mut rng);
    c.bench_function("conv_1x1_48x28x28", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let (xv, wv) = (tape.constant(x.clone()), tape.constant(w_dense.clone()));
            black_box(tape.conv2d(xv, wv, None, ConvSpec::new(1, 0, 1)).expect("conv"));
        })
    });
    c.bench_function("conv_dw3x3_48x28x28", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let (xv, wv) = (tape.constant(x.clone()), tape.constant(w_depth.clone()));
            black_box(tape.conv2d(xv, wv, None, ConvSpec::new(1, 1, 48)).expect("conv"));
        })
    });
}

fn ranking(c: &mut Criterion) {
    let mut rng = seeded_rng(3);
    let classes: Vec<String> = (0..9).map(|i| format!("c{i}")).collect();
    let models = (0..12)
        .map(|m| {
            let per_class = (0..9)
                .map(|_| {
                    let mut f = ClassFolds::default();
                    for _ in 0..5 {
                        f.recall.push(rng.random_range(0.5..1.0));
                        f.f1.push(rng.random_range(0.5..1.0));
                        f.precision.push(rng.random_range(0.5..1.0));
                        f.specificity.push(rng.random_range(0.5..1.0));
                    }
                    f
                })
                .collect();
            ModelEntry { name: format!("m{m}"), per_class, accuracy: (0..5).map(|_| rng.random_range(0.5..1.0)).collect(), fps: rng.random_range(5.0..100.0) }
        })
        .collect();
    let table = RankingTable { classes, models };
    c.bench_function("ors_12_models_9_classes", |b| b.iter(|| ors(black_box(&table), Alpha::default()).expect("ors")));
}

criterion_group!(benches, conv, ranking);
criterion_main!(benches);
