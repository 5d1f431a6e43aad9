use super::conv::window_out;
use crate::error::{shape_err, Result};
use crate::tensor::{Float, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    /// Divides by the full kernel area, padding included.
    Avg,
}

impl<T: Float> Tape<T> {
    pub fn pool2d(
        &mut self,
        x: Var,
        kind: PoolKind,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let ho = window_out(h, kernel.0, stride.0, padding.0);
        let wo = window_out(w, kernel.1, stride.1, padding.1);
        let (Some(ho), Some(wo)) = (ho, wo) else {
            return Err(shape_err!("pool kernel {kernel:?} does not fit padded input {h}×{w}"));
        };
        if 2 * padding.0 > kernel.0 || 2 * padding.1 > kernel.1 {
            return Err(shape_err!("pool padding {padding:?} exceeds half the kernel {kernel:?}"));
        }
        let xv = self.value(x).data();
        let planes = n * c;
        let mut out = vec![T::zero(); planes * ho * wo];
        let mut argmax = match kind {
            PoolKind::Max => vec![0usize; out.len()],
            PoolKind::Avg => Vec::new(),
        };
        let inv_area = T::one() / T::lit((kernel.0 * kernel.1) as f64);
        for pl in 0..planes {
            let plane = &xv[pl * h * w..][..h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let o = (pl * ho + oy) * wo + ox;
                    let mut best = T::neg_infinity();
                    let mut best_i = 0;
                    let mut acc = T::zero();
                    for ki in 0..kernel.0 {
                        let Some(iy) = (oy * stride.0 + ki).checked_sub(padding.0).filter(|&i| i < h) else { continue };
                        for kj in 0..kernel.1 {
                            let Some(ix) = (ox * stride.1 + kj).checked_sub(padding.1).filter(|&i| i < w) else { continue };
                            let v = plane[iy * w + ix];
                            acc += v;
                            if v > best {
                                best = v;
                                best_i = pl * h * w + iy * w + ix;
                            }
                        }
                    }
                    match kind {
                        PoolKind::Max => {
                            out[o] = best;
                            argmax[o] = best_i;
                        }
                        PoolKind::Avg => out[o] = acc * inv_area,
                    }
                }
            }
        }
        let n_in = xv.len();
        let value = Tensor::new(vec![n, c, ho, wo], out)?;
        self.record("pool2d", value, &[x], move |args| {
            let mut dx = vec![T::zero(); n_in];
            match kind {
                PoolKind::Max => {
                    for (&i, &g) in argmax.iter().zip(args.grad) {
                        dx[i] += g;
                    }
                }
                PoolKind::Avg => {
                    for pl in 0..planes {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let g = args.grad[(pl * ho + oy) * wo + ox] * inv_area;
                                for ki in 0..kernel.0 {
                                    let Some(iy) = (oy * stride.0 + ki).checked_sub(padding.0).filter(|&i| i < h) else { continue };
                                    for kj in 0..kernel.1 {
                                        let Some(ix) = (ox * stride.1 + kj).checked_sub(padding.1).filter(|&i| i < w) else { continue };
                                        dx[pl * h * w + iy * w + ix] += g;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            vec![Some(dx)]
        })
    }
}
