mod common;

use common::{finite_diff, max_relative_error, relative_error};
use earnet::nn::{BatchNormState, ConvSpec, PoolKind};
use earnet::tensor::ReduceKind;
use earnet::{Result, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn oracle_on_known_functions() {
    let p = [Tensor::<f64>::scalar(1.0)];
    let g = finite_diff(|w| w[0].data()[0].powi(2), &p, 1e-4);
    assert!((g[0][0] - 2.0).abs() < 1e-6);
    let p = [Tensor::<f64>::from_fn([3], |i| i as f64)];
    assert!(finite_diff(|_| 4.2, &p, 1e-4)[0].iter().all(|&v| v == 0.0));
    assert_eq!(relative_error(0.0, 0.0, 0.0), 0.0);
    assert!((relative_error(1.0, 1.001, 0.0) - 0.001 / 1.001).abs() < 1e-12);
}

/// Compares tape gradients of `sum(r ⊙ build(inputs))` against central differences.
fn check<F>(inputs: Vec<Tensor<f64>>, build: F)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let probe = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars).unwrap();
        Tensor::<f64>::uniform(tape.shape(out).to_vec(), -1.0, 1.0, &mut rng)
    };
    let scalar = |tape: &mut Tape<f64>, vars: &[Var]| -> Result<Var> {
        let out = build(tape, vars)?;
        let r = tape.constant(probe.clone());
        let weighted = tape.mul(out, r)?;
        tape.sum(weighted)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = scalar(&mut tape, &vars).unwrap();
    tape.backward(loss).unwrap();
    let numeric = finite_diff(
        |ps| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = ps.iter().map(|t| tape.constant(t.clone())).collect();
            let loss = scalar(&mut tape, &vars).unwrap();
            tape.value(loss).data()[0]
        },
        &inputs,
        1e-6,
    );
    for (i, (v, num)) in vars.iter().zip(&numeric).enumerate() {
        let analytic = tape.grad_tensor(*v);
        let err = max_relative_error(analytic.data(), num, 1e-6);
        assert!(err < 1e-3, "input {i}: relative error {err}");
    }
}

fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape.to_vec(), -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn elementwise_with_broadcast() {
    check(vec![rand(&[2, 3, 4, 5], 1), rand(&[2, 1, 4, 5], 2)], |t, v| t.mul(v[0], v[1]));
    check(vec![rand(&[2, 3, 4, 5], 3), rand(&[2, 3, 1, 1], 4)], |t, v| t.add(v[0], v[1]));
}

#[test]
fn fan_out_accumulates() {
    check(vec![rand(&[2, 3, 3, 3], 5)], |t, v| {
        let a = t.relu(v[0])?;
        let b = t.sigmoid(v[0])?;
        let c = t.mul(a, b)?;
        t.add(c, v[0])
    });
}

#[test]
fn reductions() {
    check(vec![rand(&[2, 4, 3, 3], 6)], |t, v| t.reduce(v[0], &[1], ReduceKind::Max));
    check(vec![rand(&[2, 4, 3, 3], 7)], |t, v| t.reduce(v[0], &[2, 3], ReduceKind::Mean));
}

#[test]
fn convolutions() {
    for (groups, stride, pad) in [(1, 1, 1), (2, 2, 1), (4, 2, 1), (4, 1, 0)] {
        let k = if pad == 0 { 1 } else { 3 };
        check(
            vec![rand(&[2, 4, 5, 5], 8), rand(&[4, 4 / groups, k, k], 9), rand(&[4], 10)],
            move |t, v| t.conv2d(v[0], v[1], Some(v[2]), ConvSpec::new(stride, pad, groups)),
        );
    }
}

#[test]
fn batch_norm_both_modes() {
    let mut state = BatchNormState::new(3);
    state.running_mean = vec![0.1, -0.2, 0.3];
    state.running_var = vec![0.5, 1.5, 2.0];
    for train in [true, false] {
        let st = state.clone();
        check(vec![rand(&[3, 3, 2, 2], 11), rand(&[3], 12), rand(&[3], 13)], move |t, v| {
            Ok(t.batchnorm2d(v[0], v[1], v[2], &st, train)?.0)
        });
    }
}

#[test]
fn pooling_shuffle_and_views() {
    check(vec![rand(&[2, 2, 6, 6], 14)], |t, v| t.pool2d(v[0], PoolKind::Max, (3, 3), (2, 2), (1, 1)));
    check(vec![rand(&[2, 2, 8, 8], 15)], |t, v| t.pool2d(v[0], PoolKind::Avg, (4, 4), (4, 4), (0, 0)));
    check(vec![rand(&[2, 6, 2, 2], 16)], |t, v| t.channel_shuffle(v[0], 2));
    check(vec![rand(&[2, 6, 2, 2], 17)], |t, v| {
        let a = t.narrow(v[0], 1, 0, 3)?;
        let b = t.narrow(v[0], 1, 3, 3)?;
        let b = t.affine(b, 2.0, 1.0)?;
        t.concat(&[b, a], 1)
    });
}

#[test]
fn attention_blocks() {
    check(vec![rand(&[2, 8, 3, 3], 18), rand(&[1, 1, 1, 5], 19)], |t, v| t.eca(v[0], v[1]));
    check(vec![rand(&[2, 5, 4, 4], 20), rand(&[1, 2, 3, 3], 21), rand(&[1], 22)], |t, v| {
        t.spatial_attention(v[0], v[1], Some(v[2]))
    });
    check(vec![rand(&[2, 1, 3, 3], 27), rand(&[2, 4, 3, 3], 28), rand(&[2, 4, 3, 3], 29)], |t, v| {
        let gate = t.sigmoid(v[0])?;
        t.gated_blend(gate, v[1], v[2])
    });
}

#[test]
fn linear_and_loss() {
    check(vec![rand(&[3, 5], 23), rand(&[4, 5], 24), rand(&[4], 25)], |t, v| t.linear(v[0], v[1], Some(v[2])));
    check(vec![rand(&[4, 6], 26)], |t, v| t.softmax_cross_entropy(v[0], &[0, 5, 2, 2]));
}
