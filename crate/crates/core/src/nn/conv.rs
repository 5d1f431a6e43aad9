//! 2-D cross-correlation with stride, zero padding and channel groups.
//!
//! Dense and grouped convolutions go through im2col + GEMM with the whole
//! batch folded into the column matrix; depthwise convolutions (one input and
//! one output channel per group) use direct loops.

use crate::error::{config_err, shape_err, Result};
use crate::tensor::{Float, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self { stride: (1, 1), padding: (0, 0), groups: 1 }
    }
}

impl ConvSpec {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Self { stride: (stride, stride), padding: (padding, padding), groups }
    }
}

/// Output extent of a sliding window; `None` if the kernel does not fit.
pub(crate) fn window_out(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    (stride > 0 && kernel > 0 && padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct Geom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    groups: usize,
    stride: (usize, usize),
    pad: (usize, usize),
}

impl Geom {
    fn new(x: &[usize], weight: &[usize], spec: ConvSpec) -> Result<Self> {
        let [n, cin, h, w] = *x else { return Err(shape_err!("conv2d input must be N×C×H×W, got {x:?}")) };
        let [cout, cin_g, kh, kw] = *weight else {
            return Err(shape_err!("conv2d weight must be Cout×Cin/g×Kh×Kw, got {weight:?}"));
        };
        let groups = spec.groups;
        if groups == 0 || cin % groups != 0 || cout % groups != 0 {
            return Err(config_err!("groups={groups} must divide Cin={cin} and Cout={cout}"));
        }
        if cin_g != cin / groups {
            return Err(shape_err!("weight {weight:?} expects {} input channels per group, input has {cin}/{groups}", cin_g));
        }
        let ho = window_out(h, kh, spec.stride.0, spec.padding.0);
        let wo = window_out(w, kw, spec.stride.1, spec.padding.1);
        let (Some(ho), Some(wo)) = (ho, wo) else {
            return Err(shape_err!("kernel {kh}×{kw} does not fit padded input {h}×{w} (pad {:?}, stride {:?})", spec.padding, spec.stride));
        };
        Ok(Self { n, cin, h, w, cout, kh, kw, ho, wo, groups, stride: spec.stride, pad: spec.padding })
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    fn k_group(&self) -> usize {
        self.cin / self.groups * self.kh * self.kw
    }

    fn depthwise(&self) -> bool {
        self.groups == self.cin && self.groups == self.cout
    }

    /// Input column touched by output column `o` and kernel tap `k`, if inside.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        let i = (o * stride + k).checked_sub(pad)?;
        (i < extent).then_some(i)
    }
}

/// Column matrix `(Cin·Kh·Kw) × (N·Ho·Wo)`.
fn im2col<T: Float>(x: &[T], g: &Geom) -> Vec<T> {
    let (p, np) = (g.p(), g.n * g.p());
    let mut col = vec![T::zero(); g.cin * g.kh * g.kw * np];
    for c in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * np..(row + 1) * np];
                for n in 0..g.n {
                    let plane = &x[(n * g.cin + c) * g.h * g.w..][..g.h * g.w];
                    for oy in 0..g.ho {
                        let Some(iy) = Geom::src(oy, ki, g.stride.0, g.pad.0, g.h) else { continue };
                        let out_row = &mut dst[n * p + oy * g.wo..][..g.wo];
                        let in_row = &plane[iy * g.w..][..g.w];
                        for (ox, d) in out_row.iter_mut().enumerate() {
                            if let Some(ix) = Geom::src(ox, kj, g.stride.1, g.pad.1, g.w) {
                                *d = in_row[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im<T: Float>(col: &[T], g: &Geom) -> Vec<T> {
    let (p, np) = (g.p(), g.n * g.p());
    let mut dx = vec![T::zero(); g.n * g.cin * g.h * g.w];
    for c in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * np..(row + 1) * np];
                for n in 0..g.n {
                    let plane = &mut dx[(n * g.cin + c) * g.h * g.w..][..g.h * g.w];
                    for oy in 0..g.ho {
                        let Some(iy) = Geom::src(oy, ki, g.stride.0, g.pad.0, g.h) else { continue };
                        let col_row = &src[n * p + oy * g.wo..][..g.wo];
                        let in_row = &mut plane[iy * g.w..][..g.w];
                        for (ox, &v) in col_row.iter().enumerate() {
                            if let Some(ix) = Geom::src(ox, kj, g.stride.1, g.pad.1, g.w) {
                                in_row[ix] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// `(N, C, P)` → `(C, N·P)`.
fn batch_to_cols<T: Float>(data: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    if n == 1 {
        return data.to_vec();
    }
    let mut out = vec![T::zero(); data.len()];
    for b in 0..n {
        for ch in 0..c {
            out[ch * n * p + b * p..][..p].copy_from_slice(&data[(b * c + ch) * p..][..p]);
        }
    }
    out
}

/// `(C, N·P)` → `(N, C, P)`.
fn cols_to_batch<T: Float>(data: Vec<T>, n: usize, c: usize, p: usize) -> Vec<T> {
    if n == 1 {
        return data;
    }
    let mut out = vec![T::zero(); data.len()];
    for b in 0..n {
        for ch in 0..c {
            out[(b * c + ch) * p..][..p].copy_from_slice(&data[ch * n * p + b * p..][..p]);
        }
    }
    out
}

fn gemm_forward<T: Float>(x: &[T], w: &[T], g: &Geom) -> (Vec<T>, Vec<T>) {
    let col = im2col(x, g);
    let np = g.n * g.p();
    let (kg, cg) = (g.k_group(), g.cout / g.groups);
    let mut out = vec![T::zero(); g.cout * np];
    for grp in 0..g.groups {
        T::gemm(
            cg,
            kg,
            np,
            T::one(),
            &w[grp * cg * kg..],
            (kg as isize, 1),
            &col[grp * kg * np..],
            (np as isize, 1),
            T::zero(),
            &mut out[grp * cg * np..],
            (np as isize, 1),
        );
    }
    (cols_to_batch(out, g.n, g.cout, g.p()), col)
}

/// Returns `(dx, dw)` for the GEMM path; either may be skipped.
fn gemm_backward<T: Float>(gout: &[T], w: &[T], col: &[T], g: &Geom, need_x: bool, need_w: bool) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let np = g.n * g.p();
    let (kg, cg) = (g.k_group(), g.cout / g.groups);
    let gcols = batch_to_cols(gout, g.n, g.cout, g.p());
    let dw = need_w.then(|| {
        let mut dw = vec![T::zero(); g.cout * kg];
        for grp in 0..g.groups {
            T::gemm(
                cg,
                np,
                kg,
                T::one(),
                &gcols[grp * cg * np..],
                (np as isize, 1),
                &col[grp * kg * np..],
                (1, np as isize),
                T::zero(),
                &mut dw[grp * cg * kg..],
                (kg as isize, 1),
            );
        }
        dw
    });
    let dx = need_x.then(|| {
        let mut dcol = vec![T::zero(); g.groups * kg * np];
        for grp in 0..g.groups {
            T::gemm(
                kg,
                cg,
                np,
                T::one(),
                &w[grp * cg * kg..],
                (1, kg as isize),
                &gcols[grp * cg * np..],
                (np as isize, 1),
                T::zero(),
                &mut dcol[grp * kg * np..],
                (np as isize, 1),
            );
        }
        col2im(&dcol, g)
    });
    (dx, dw)
}

fn depthwise_forward<T: Float>(x: &[T], w: &[T], g: &Geom) -> Vec<T> {
    let mut out = vec![T::zero(); g.n * g.cout * g.p()];
    for n in 0..g.n {
        for c in 0..g.cin {
            let plane = &x[(n * g.cin + c) * g.h * g.w..][..g.h * g.w];
            let kern = &w[c * g.kh * g.kw..][..g.kh * g.kw];
            let dst = &mut out[(n * g.cout + c) * g.p()..][..g.p()];
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let wv = kern[ki * g.kw + kj];
                    for oy in 0..g.ho {
                        let Some(iy) = Geom::src(oy, ki, g.stride.0, g.pad.0, g.h) else { continue };
                        let in_row = &plane[iy * g.w..][..g.w];
                        let out_row = &mut dst[oy * g.wo..][..g.wo];
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            if let Some(ix) = Geom::src(ox, kj, g.stride.1, g.pad.1, g.w) {
                                *o += wv * in_row[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn depthwise_backward<T: Float>(gout: &[T], x: &[T], w: &[T], g: &Geom, need_x: bool, need_w: bool) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let mut dx = need_x.then(|| vec![T::zero(); x.len()]);
    let mut dw = need_w.then(|| vec![T::zero(); w.len()]);
    for n in 0..g.n {
        for c in 0..g.cin {
            let base = (n * g.cin + c) * g.h * g.w;
            let gplane = &gout[(n * g.cout + c) * g.p()..][..g.p()];
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let widx = (c * g.kh + ki) * g.kw + kj;
                    let wv = w[widx];
                    let mut acc = T::zero();
                    for oy in 0..g.ho {
                        let Some(iy) = Geom::src(oy, ki, g.stride.0, g.pad.0, g.h) else { continue };
                        for ox in 0..g.wo {
                            let Some(ix) = Geom::src(ox, kj, g.stride.1, g.pad.1, g.w) else { continue };
                            let gv = gplane[oy * g.wo + ox];
                            let xi = base + iy * g.w + ix;
                            acc += gv * x[xi];
                            if let Some(dx) = dx.as_mut() {
                                dx[xi] += gv * wv;
                            }
                        }
                    }
                    if let Some(dw) = dw.as_mut() {
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    (dx, dw)
}

impl<T: Float> Tape<T> {
    /// Cross-correlation of `x` (N×Cin×H×W) with `weight` (Cout×Cin/groups×Kh×Kw).
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let g = Geom::new(self.shape(x), self.shape(weight), spec)?;
        if let Some(b) = bias {
            if self.shape(b) != [g.cout] {
                return Err(shape_err!("conv2d bias must be [{}], got {:?}", g.cout, self.shape(b)));
            }
        }
        let xv = self.value(x).data();
        let wv = self.value(weight).data();
        let (mut out, col) = if g.depthwise() {
            (depthwise_forward(xv, wv, &g), None)
        } else {
            let (out, col) = gemm_forward(xv, wv, &g);
            (out, Some(col))
        };
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for (i, plane) in out.chunks_mut(g.p()).enumerate() {
                let bc = bv[i % g.cout];
                plane.iter_mut().for_each(|v| *v += bc);
            }
        }
        let value = Tensor::new(vec![g.n, g.cout, g.ho, g.wo], out)?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        self.record("conv2d", value, &inputs, move |args| {
            let (xv, wv) = (args.inputs[0].data(), args.inputs[1].data());
            let (dx, dw) = match &col {
                Some(col) => gemm_backward(args.grad, wv, col, &g, args.needs[0], args.needs[1]),
                None => depthwise_backward(args.grad, xv, wv, &g, args.needs[0], args.needs[1]),
            };
            let mut grads = vec![dx, dw];
            if args.inputs.len() == 3 {
                grads.push(args.needs[2].then(|| {
                    let mut db = vec![T::zero(); g.cout];
                    for (i, plane) in args.grad.chunks(g.p()).enumerate() {
                        db[i % g.cout] += plane.iter().copied().sum::<T>();
                    }
                    db
                }));
            }
            grads
        })
    }
}
