use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::tensor::{Float, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropBlockParams {
    pub block_size: usize,
    pub drop_rate: f64,
}

impl Default for DropBlockParams {
    fn default() -> Self {
        Self { block_size: 3, drop_rate: 0.1 }
    }
}

impl DropBlockParams {
    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 || self.block_size % 2 == 0 {
            return Err(config_err!("DropBlock block size must be odd and positive, got {}", self.block_size));
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return Err(config_err!("DropBlock rate must lie in [0, 1), got {}", self.drop_rate));
        }
        Ok(())
    }

    /// Largest odd block not exceeding `min(h, w)` or the configured size.
    /// Small desk-scale maps cannot hold the configured block.
    pub fn fitted(self, h: usize, w: usize) -> Self {
        let limit = h.min(w).max(1);
        let mut block_size = self.block_size.min(limit);
        if block_size % 2 == 0 {
            block_size -= 1;
        }
        Self { block_size, ..self }
    }

    /// Seed probability at which the expected dropped fraction of an
    /// `h`×`w` plane equals `drop_rate`. Overlapping blocks are accounted
    /// for: a unit covered by `k` possible seeds survives with `(1 − γ)^k`.
    pub fn seed_rate(&self, h: usize, w: usize) -> f64 {
        let b = self.block_size;
        if self.drop_rate == 0.0 || b > h || b > w {
            return 0.0;
        }
        let cover = |n: usize, i: usize| i.min(n - b) + 1 - i.saturating_sub(b - 1);
        let rows: Vec<usize> = (0..h).map(|y| cover(h, y)).collect();
        let cols: Vec<usize> = (0..w).map(|x| cover(w, x)).collect();
        let expected = |gamma: f64| {
            let mut total = 0.0;
            for &r in &rows {
                for &c in &cols {
                    total += 1.0 - (1.0 - gamma).powi((r * c) as i32);
                }
            }
            total / (h * w) as f64
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if expected(mid) < self.drop_rate {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Multiplicative mask for one DropBlock draw: dropped units are 0, kept
/// units are rescaled by `total / kept`.
pub fn dropblock_mask<T: Float>(shape: [usize; 4], p: &DropBlockParams, rng: &mut impl Rng) -> Result<Tensor<T>> {
    p.validate()?;
    let [n, c, h, w] = shape;
    let b = p.block_size;
    if b > h || b > w {
        return Err(config_err!("DropBlock block size {b} exceeds feature map {h}×{w}"));
    }
    let gamma = p.seed_rate(h, w);
    let mut keep = vec![true; n * c * h * w];
    for plane in keep.chunks_mut(h * w) {
        // Seeds only where a whole block fits; each seed clears a b×b block.
        for sy in 0..=h - b {
            for sx in 0..=w - b {
                if rng.random::<f64>() < gamma {
                    for y in sy..sy + b {
                        plane[y * w + sx..y * w + sx + b].iter_mut().for_each(|k| *k = false);
                    }
                }
            }
        }
    }
    let kept = keep.iter().filter(|&&k| k).count();
    let scale = if kept == 0 { T::zero() } else { T::lit(keep.len() as f64 / kept as f64) };
    Tensor::new(shape.to_vec(), keep.into_iter().map(|k| if k { scale } else { T::zero() }).collect())
}

impl<T: Float> Tape<T> {
    /// Identity in eval mode or at rate 0; otherwise multiplies by a fresh mask.
    pub fn dropblock(&mut self, x: Var, p: &DropBlockParams, train: bool, rng: &mut impl Rng) -> Result<Var> {
        p.validate()?;
        let (n, c, h, w) = self.value(x).dims4()?;
        if p.block_size > h || p.block_size > w {
            return Err(config_err!("DropBlock block size {} exceeds feature map {h}×{w}", p.block_size));
        }
        if !train || p.drop_rate == 0.0 {
            return Ok(x);
        }
        let mask = dropblock_mask([n, c, h, w], p, rng)?;
        let mask = self.constant(mask);
        self.mul(x, mask)
    }
}
