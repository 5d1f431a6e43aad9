use super::conv::ConvSpec;
use crate::error::{config_err, shape_err, Result};
use crate::tensor::{Float, ReduceKind, Tape, Tensor, Var};

impl<T: Float> Tape<T> {
    /// Spatial attention logits: channel-wise max and mean maps stacked as
    /// two channels (max first), then a 3×3 convolution to one channel.
    /// The caller applies the gate activation.
    pub fn spatial_attention(&mut self, fmerge: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        self.value(fmerge).dims4()?;
        if self.shape(weight) != [1, 2, 3, 3] {
            return Err(shape_err!("spatial attention conv must be 1×2×3×3, got {:?}", self.shape(weight)));
        }
        let max = self.reduce(fmerge, &[1], ReduceKind::Max)?;
        let mean = self.reduce(fmerge, &[1], ReduceKind::Mean)?;
        let stacked = self.concat(&[max, mean], 1)?;
        self.conv2d(stacked, weight, bias, ConvSpec::new(1, 1, 1))
    }

    /// Efficient channel attention: global average pool, a bias-free 1-D
    /// convolution of odd width `k` across the channel axis, sigmoid, and a
    /// per-channel rescale of `x`. `weight` holds the `k` taps as 1×1×1×k.
    pub fn eca(&mut self, x: Var, weight: Var) -> Result<Var> {
        let (n, c, _, _) = self.value(x).dims4()?;
        let ws = self.shape(weight).to_vec();
        let [1, 1, 1, k] = ws[..] else {
            return Err(shape_err!("ECA weight must be 1×1×1×k, got {ws:?}"));
        };
        if k % 2 == 0 {
            return Err(config_err!("ECA kernel width must be odd, got {k}"));
        }
        let pooled = self.reduce(x, &[2, 3], ReduceKind::Mean)?;
        let row = self.reshape(pooled, &[n, 1, 1, c])?;
        let spec = ConvSpec { stride: (1, 1), padding: (0, (k - 1) / 2), groups: 1 };
        let mixed = self.conv2d(row, weight, None, spec)?;
        let scales = self.sigmoid(mixed)?;
        let scales = self.reshape(scales, &[n, c, 1, 1])?;
        self.mul(x, scales)
    }

    /// `gate ⊗ a + (1 − gate) ⊗ b` with `gate` (N×1×H×W, values in [0, 1])
    /// broadcast over channels.
    ///
    /// Evaluated as `b + gate·(a − b)` and kept inside `[min(a,b), max(a,b)]`,
    /// so identical operands come back bit-exact and rounding never leaves the
    /// convex hull.
    pub fn gated_blend(&mut self, gate: Var, a: Var, b: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(a).dims4()?;
        if self.shape(b) != [n, c, h, w] {
            return Err(shape_err!("blend operands differ: {:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        if self.shape(gate) != [n, 1, h, w] {
            return Err(shape_err!("blend gate must be {:?}, got {:?}", [n, 1, h, w], self.shape(gate)));
        }
        let p = h * w;
        let (gv, av, bv) = (self.value(gate).data(), self.value(a).data(), self.value(b).data());
        let out: Vec<T> = av
            .iter()
            .zip(bv)
            .enumerate()
            .map(|(i, (&x, &y))| {
                let g = gv[(i / (c * p)) * p + i % p];
                (y + g * (x - y)).max(x.min(y)).min(x.max(y))
            })
            .collect();
        let value = Tensor::new(vec![n, c, h, w], out)?;
        self.record("gated_blend", value, &[gate, a, b], move |args| {
            let (gv, av, bv) = (args.inputs[0].data(), args.inputs[1].data(), args.inputs[2].data());
            let gate_at = |i: usize| (i / (c * p)) * p + i % p;
            let dgate = args.needs[0].then(|| {
                let mut d = vec![T::zero(); gv.len()];
                for (i, &g) in args.grad.iter().enumerate() {
                    d[gate_at(i)] += g * (av[i] - bv[i]);
                }
                d
            });
            let da = args.needs[1].then(|| args.grad.iter().enumerate().map(|(i, &g)| g * gv[gate_at(i)]).collect());
            let db = args.needs[2].then(|| {
                args.grad.iter().enumerate().map(|(i, &g)| g * (T::one() - gv[gate_at(i)])).collect()
            });
            vec![dgate, da, db]
        })
    }
}
