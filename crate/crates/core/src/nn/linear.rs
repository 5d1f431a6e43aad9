use crate::error::{shape_err, Result};
use crate::tensor::{Float, Tape, Tensor, Var};

impl<T: Float> Tape<T> {
    /// `x·Wᵀ + b` for `x: N×D`, `W: K×D`, `b: K`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(weight).to_vec());
        let (&[n, d], &[k, d2]) = (&xs[..], &ws[..]) else {
            return Err(shape_err!("linear expects N×D input and K×D weight, got {xs:?} and {ws:?}"));
        };
        if d != d2 {
            return Err(shape_err!("linear input width {d} does not match weight {ws:?}"));
        }
        let mut out = vec![T::zero(); n * k];
        if let Some(b) = bias {
            let bv = self.value(b).data();
            if bv.len() != k {
                return Err(shape_err!("linear bias must have {k} entries, got {}", bv.len()));
            }
            for row in out.chunks_mut(k) {
                row.copy_from_slice(bv);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(n, d, k, T::one(), self.value(x).data(), (d as isize, 1), self.value(weight).data(), (1, d as isize), beta, &mut out, (k as isize, 1));
        let value = Tensor::new(vec![n, k], out)?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        self.record("linear", value, &inputs, move |args| {
            let g = args.grad;
            let dx = args.needs[0].then(|| {
                let mut dx = vec![T::zero(); n * d];
                T::gemm(n, k, d, T::one(), g, (k as isize, 1), args.inputs[1].data(), (d as isize, 1), T::zero(), &mut dx, (d as isize, 1));
                dx
            });
            let dw = args.needs[1].then(|| {
                let mut dw = vec![T::zero(); k * d];
                T::gemm(k, n, d, T::one(), g, (1, k as isize), args.inputs[0].data(), (d as isize, 1), T::zero(), &mut dw, (d as isize, 1));
                dw
            });
            let mut grads = vec![dx, dw];
            if args.inputs.len() == 3 {
                grads.push(args.needs[2].then(|| {
                    let mut db = vec![T::zero(); k];
                    for row in g.chunks(k) {
                        db.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                    }
                    db
                }));
            }
            grads
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lin(x: Tensor<f64>, w: Tensor<f64>, b: Tensor<f64>) -> Tensor<f64> {
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.constant(x), tape.constant(w), tape.constant(b));
        let y = tape.linear(xv, wv, Some(bv)).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn identity_weight_passes_through() {
        let x = Tensor::new([2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 4.0]).unwrap();
        let w = Tensor::from_fn([3, 3], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 });
        assert_eq!(lin(x.clone(), w, Tensor::zeros([3])), x);
    }

    #[test]
    fn row_dot_product() {
        let y = lin(Tensor::ones([1, 2]), Tensor::new([1, 2], vec![1.0, 2.0]).unwrap(), Tensor::zeros([1]));
        assert_eq!(y.data(), &[3.0]);
    }

    #[test]
    fn random_case_matches_dot_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let x = Tensor::<f64>::uniform([4, 7], -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::uniform([3, 7], -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::uniform([3], -1.0, 1.0, &mut rng);
        let y = lin(x.clone(), w.clone(), b.clone());
        for i in 0..4 {
            for j in 0..3 {
                let want = b.data()[j] + (0..7).map(|t| x.at(&[i, t]) * w.at(&[j, t])).sum::<f64>();
                assert!((y.at(&[i, j]) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mismatched_width_is_shape_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros([2, 3]));
        let w = tape.constant(Tensor::zeros([4, 5]));
        assert!(tape.linear(x, w, None).is_err());
    }
}
