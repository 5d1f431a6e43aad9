use crate::error::{shape_err, Error, Result};
use crate::tensor::{Float, Tape, Tensor, Var};

/// Running statistics and hyperparameters of a 2-D batch norm. The affine
/// `gamma`/`beta` are ordinary trainable tensors passed to the op as vars.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T = f32> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Float> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self { running_mean: vec![T::zero(); channels], running_var: vec![T::one(); channels], momentum: 0.1, eps: 1e-5 }
    }

    /// Exponential moving average with the unbiased batch variance.
    pub fn update(&mut self, stats: &BatchStats<T>) {
        let m = T::lit(self.momentum);
        let keep = T::one() - m;
        for (r, &b) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in self.running_var.iter_mut().zip(&stats.var_unbiased) {
            *r = keep * *r + m * b;
        }
    }
}

/// Per-channel batch statistics observed in a training-mode pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var_unbiased: Vec<T>,
}

impl<T: Float> Tape<T> {
    /// `gamma·(x−μ)/sqrt(σ²+eps)+beta` per channel. Training mode uses batch
    /// statistics and returns them for the running update; eval mode uses the
    /// running statistics in `state`.
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &BatchNormState<T>,
        train: bool,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || state.running_mean.len() != c {
            return Err(shape_err!("batchnorm2d parameters do not match {c} channels"));
        }
        let m = n * h * w;
        let p = h * w;
        let eps = T::lit(state.eps);
        let xv = self.value(x).data();
        let (mean, var) = if train {
            if m < 2 {
                return Err(Error::Input(format!(
                    "training-mode batch norm needs more than one value per channel, got N·H·W={m}"
                )));
            }
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for b in 0..n {
                for ch in 0..c {
                    mean[ch] += xv[(b * c + ch) * p..][..p].iter().copied().sum::<T>();
                }
            }
            let inv_m = T::one() / T::lit(m as f64);
            mean.iter_mut().for_each(|v| *v *= inv_m);
            for b in 0..n {
                for ch in 0..c {
                    let mu = mean[ch];
                    var[ch] += xv[(b * c + ch) * p..][..p].iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
                }
            }
            var.iter_mut().for_each(|v| *v *= inv_m);
            (mean, var)
        } else {
            (state.running_mean.clone(), state.running_var.clone())
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for (i, (&v, (xh, o))) in xv.iter().zip(xhat.iter_mut().zip(out.iter_mut())).enumerate() {
            let ch = (i / p) % c;
            *xh = (v - mean[ch]) * inv_std[ch];
            *o = gv[ch] * *xh + bv[ch];
        }
        let stats = train.then(|| {
            let corr = T::lit(m as f64 / (m - 1) as f64);
            BatchStats { mean: mean.clone(), var_unbiased: var.iter().map(|&v| v * corr).collect() }
        });
        let value = Tensor::new(vec![n, c, h, w], out)?;
        let var = self.record("batchnorm2d", value, &[x, gamma, beta], move |args| {
            let g = args.grad;
            let gv = args.inputs[1].data();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for (i, (&gi, &xh)) in g.iter().zip(&xhat).enumerate() {
                let ch = (i / p) % c;
                dgamma[ch] += gi * xh;
                dbeta[ch] += gi;
            }
            let dx = args.needs[0].then(|| {
                if train {
                    // dx = γ·invstd/M · (M·g − Σg − x̂·Σ(g·x̂))
                    let inv_m = T::one() / T::lit(m as f64);
                    g.iter()
                        .zip(&xhat)
                        .enumerate()
                        .map(|(i, (&gi, &xh))| {
                            let ch = (i / p) % c;
                            gv[ch] * inv_std[ch] * (gi - inv_m * dbeta[ch] - xh * inv_m * dgamma[ch])
                        })
                        .collect()
                } else {
                    g.iter().enumerate().map(|(i, &gi)| gi * gv[(i / p) % c] * inv_std[(i / p) % c]).collect()
                }
            });
            vec![dx, args.needs[1].then_some(dgamma), args.needs[2].then_some(dbeta)]
        })?;
        Ok((var, stats))
    }
}
