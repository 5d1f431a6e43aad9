use crate::error::{shape_err, Error, Result};
use crate::tensor::{Float, Tape, Tensor, Var};

impl<T: Float> Tape<T> {
    /// Mean over the batch of `−log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        let [n, k] = shape[..] else {
            return Err(shape_err!("cross-entropy expects N×K logits, got {shape:?}"));
        };
        if targets.len() != n {
            return Err(shape_err!("{} targets for a batch of {n}", targets.len()));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::Input(format!("target class {t} outside [0, {k})")));
        }
        let probs = self.value(logits).softmax_rows();
        let lv = self.value(logits).data();
        let mut total = T::zero();
        for (row, &t) in lv.chunks(k).zip(targets) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            total += lse - row[t];
        }
        let inv_n = T::one() / T::lit(n as f64);
        let targets = targets.to_vec();
        self.record("softmax_cross_entropy", Tensor::scalar(total * inv_n), &[logits], move |args| {
            let scale = args.grad[0] * inv_n;
            let mut g: Vec<T> = probs.data().iter().map(|&p| p * scale).collect();
            for (i, &t) in targets.iter().enumerate() {
                g[i * k + t] -= scale;
            }
            vec![Some(g)]
        })
    }
}
