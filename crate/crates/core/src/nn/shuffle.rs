use crate::error::{config_err, Result};
use crate::tensor::{Float, Tape, Tensor, Var};

/// Source channel for every output channel: view channels as `(groups, C/groups)`,
/// transpose, flatten.
pub fn shuffle_permutation(channels: usize, groups: usize) -> Result<Vec<usize>> {
    if groups == 0 || channels % groups != 0 {
        return Err(config_err!("channel shuffle: {groups} groups do not divide {channels} channels"));
    }
    let per_group = channels / groups;
    Ok((0..channels).map(|o| (o % groups) * per_group + o / groups).collect())
}

impl<T: Float> Tape<T> {
    pub fn channel_shuffle(&mut self, x: Var, groups: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let perm = shuffle_permutation(c, groups)?;
        let p = h * w;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(xv.len());
        for b in 0..n {
            for &src in &perm {
                out.extend_from_slice(&xv[(b * c + src) * p..][..p]);
            }
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        self.record("channel_shuffle", value, &[x], move |args| {
            let mut dx = vec![T::zero(); args.grad.len()];
            for b in 0..n {
                for (o, &src) in perm.iter().enumerate() {
                    dx[(b * c + src) * p..][..p].copy_from_slice(&args.grad[(b * c + o) * p..][..p]);
                }
            }
            vec![Some(dx)]
        })
    }
}
