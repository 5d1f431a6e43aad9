use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::Float;

/// Bias-corrected Adam over the trainable tensors of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Float>(params: &ParamStore<T>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = (0..params.len()).map(|i| vec![0.0; params.tensor(i).numel()]).collect();
        Self { lr, beta1, beta2, eps, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn moments(&self, idx: usize) -> (&[f64], &[f64]) {
        (&self.m[idx], &self.v[idx])
    }

    /// One update. `grads` yields `(store index, gradient)`; a missing
    /// gradient counts as zero. Nothing is modified if any gradient is
    /// non-finite.
    pub fn step<'g, T: Float + 'g>(
        &mut self,
        params: &mut ParamStore<T>,
        grads: impl IntoIterator<Item = (usize, Option<&'g [T]>)>,
    ) -> Result<()> {
        let grads: Vec<(usize, Option<&[T]>)> = grads.into_iter().collect();
        for &(i, g) in &grads {
            if let Some(g) = g {
                if g.len() != params.tensor(i).numel() {
                    return Err(Error::Shape(format!("gradient for {} has {} values", params.name(i), g.len())));
                }
                if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of {} contains {bad}", params.name(i))));
                }
            }
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, g) in grads {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = params.tensor_mut(i).data_mut();
            for k in 0..p.len() {
                let gk = g.map_or(0.0, |g| g[k].as_f64());
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let update = self.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
                p[k] = T::lit(p[k].as_f64() - update);
            }
        }
        Ok(())
    }
}
