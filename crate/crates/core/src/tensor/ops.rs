use super::{strides_of, Float, Tape, Tensor, Var};
use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Mean,
    Max,
}

/// For each flat index of `a`, the flat index of `b` after broadcasting
/// `b`'s singleton dims. `None` when the shapes are identical.
fn broadcast_map(a: &[usize], b: &[usize]) -> Result<Option<Vec<usize>>> {
    if a == b {
        return Ok(None);
    }
    if a.len() != b.len() || a.iter().zip(b).any(|(&x, &y)| x != y && y != 1) {
        return Err(shape_err!("cannot broadcast {b:?} over {a:?}"));
    }
    let b_strides: Vec<usize> = strides_of(b)
        .into_iter()
        .zip(b)
        .map(|(s, &d)| if d == 1 { 0 } else { s })
        .collect();
    let numel: usize = a.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; a.len()];
    let mut offset = 0usize;
    for _ in 0..numel {
        map.push(offset);
        for d in (0..a.len()).rev() {
            idx[d] += 1;
            offset += b_strides[d];
            if idx[d] < a[d] {
                break;
            }
            offset -= b_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    Ok(Some(map))
}

/// Maps each flat input index to its output index once `dims` are reduced to 1.
fn reduce_map(shape: &[usize], dims: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let out_shape: Vec<usize> =
        shape.iter().enumerate().map(|(d, &e)| if dims.contains(&d) { 1 } else { e }).collect();
    let map = broadcast_map(shape, &out_shape)
        .expect("reduced shape broadcasts")
        .unwrap_or_else(|| (0..shape.iter().product()).collect());
    (out_shape, map)
}

impl<T: Float> Tape<T> {
    /// `a ⊕ b` or `a ⊗ b`; `b` may broadcast over `a` along singleton dims.
    pub fn elementwise(&mut self, a: Var, b: Var, kind: ElementwiseKind) -> Result<Var> {
        let map = broadcast_map(self.shape(a), self.shape(b))?;
        let av = self.value(a);
        let bv = self.value(b).data();
        let b_at = |i: usize| match &map {
            Some(m) => bv[m[i]],
            None => bv[i],
        };
        let data: Vec<T> = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| match kind {
                ElementwiseKind::Add => x + b_at(i),
                ElementwiseKind::Mul => x * b_at(i),
            })
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let name = match kind {
            ElementwiseKind::Add => "add",
            ElementwiseKind::Mul => "mul",
        };
        self.record(name, out, &[a, b], move |args| {
            let (av, bv) = (args.inputs[0].data(), args.inputs[1].data());
            let g = args.grad;
            let b_idx = |i: usize| map.as_ref().map_or(i, |m| m[i]);
            let ga = args.needs[0].then(|| match kind {
                ElementwiseKind::Add => g.to_vec(),
                ElementwiseKind::Mul => g.iter().enumerate().map(|(i, &gi)| gi * bv[b_idx(i)]).collect(),
            });
            let gb = args.needs[1].then(|| {
                let mut gb = vec![T::zero(); bv.len()];
                for (i, &gi) in g.iter().enumerate() {
                    gb[b_idx(i)] += match kind {
                        ElementwiseKind::Add => gi,
                        ElementwiseKind::Mul => gi * av[i],
                    };
                }
                gb
            });
            vec![ga, gb]
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, ElementwiseKind::Add)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, ElementwiseKind::Mul)
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Result<Var> {
        let out = self.value(x).map(|v| scale * v + shift);
        self.record("affine", out, &[x], move |args| {
            vec![Some(args.grad.iter().map(|&g| g * scale).collect())]
        })
    }

    /// Reduces `dims` to extent 1. An empty dim set returns `x` itself.
    pub fn reduce(&mut self, x: Var, dims: &[usize], kind: ReduceKind) -> Result<Var> {
        if dims.is_empty() {
            return Ok(x);
        }
        let shape = self.shape(x).to_vec();
        if let Some(&d) = dims.iter().find(|&&d| d >= shape.len()) {
            return Err(shape_err!("reduce dim {d} out of range for {shape:?}"));
        }
        let (out_shape, map) = reduce_map(&shape, dims);
        let out_numel: usize = out_shape.iter().product();
        let count = shape.iter().product::<usize>() / out_numel;
        let xv = self.value(x).data();
        match kind {
            ReduceKind::Mean => {
                let mut acc = vec![T::zero(); out_numel];
                for (i, &v) in xv.iter().enumerate() {
                    acc[map[i]] += v;
                }
                let inv = T::one() / T::lit(count as f64);
                acc.iter_mut().for_each(|v| *v *= inv);
                let out = Tensor::new(out_shape, acc)?;
                self.record("reduce_mean", out, &[x], move |args| {
                    vec![Some(map.iter().map(|&o| args.grad[o] * inv).collect())]
                })
            }
            ReduceKind::Max => {
                let mut best = vec![T::neg_infinity(); out_numel];
                let mut arg = vec![0usize; out_numel];
                for (i, &v) in xv.iter().enumerate() {
                    if v > best[map[i]] {
                        best[map[i]] = v;
                        arg[map[i]] = i;
                    }
                }
                let n_in = xv.len();
                let out = Tensor::new(out_shape, best)?;
                self.record("reduce_max", out, &[x], move |args| {
                    let mut g = vec![T::zero(); n_in];
                    for (o, &i) in arg.iter().enumerate() {
                        g[i] += args.grad[o];
                    }
                    vec![Some(g)]
                })
            }
        }
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.numel();
        let total = xv.data().iter().copied().sum::<T>();
        self.record("sum", Tensor::scalar(total), &[x], move |args| vec![Some(vec![args.grad[0]; n])])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        self.record("reshape", out, &[x], |args| vec![Some(args.grad.to_vec())])
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(shape_err!("concat axis {axis} out of range for {first:?}"));
        }
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s.iter().enumerate().any(|(d, &e)| d != axis && e != first[d]) {
                return Err(shape_err!("concat of {first:?} with {s:?} along {axis}"));
            }
            widths.push(s[axis]);
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let total: usize = widths.iter().sum();
        let mut data = vec![T::zero(); outer * total * inner];
        let mut start = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for o in 0..outer {
                let dst = (o * total + start) * inner;
                data[dst..dst + w * inner].copy_from_slice(&src[o * w * inner..(o + 1) * w * inner]);
            }
            start += w;
        }
        let mut out_shape = first;
        out_shape[axis] = total;
        let out = Tensor::new(out_shape, data)?;
        self.record("concat", out, parts, move |args| {
            let mut start = 0;
            widths
                .iter()
                .zip(&args.needs)
                .map(|(&w, &need)| {
                    let g = need.then(|| {
                        let mut g = Vec::with_capacity(outer * w * inner);
                        for o in 0..outer {
                            let src = (o * total + start) * inner;
                            g.extend_from_slice(&args.grad[src..src + w * inner]);
                        }
                        g
                    });
                    start += w;
                    g
                })
                .collect()
        })
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(shape_err!("narrow({axis}, {start}, {len}) out of range for {shape:?}"));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * full + start) * inner;
            data.extend_from_slice(&src[s..s + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let out = Tensor::new(out_shape, data)?;
        let n_in: usize = shape.iter().product();
        self.record("narrow", out, &[x], move |args| {
            let mut g = vec![T::zero(); n_in];
            for o in 0..outer {
                let d = (o * full + start) * inner;
                g[d..d + len * inner].copy_from_slice(&args.grad[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(g)]
        })
    }
}
