//! Independent reference computations shared by the integration tests.
//! Nothing here calls into the code under test except to read parameters
//! and evaluate forward passes.
#![allow(dead_code)]

use earnet::{Float, Model, Tensor};

/// Central finite differences `(f(p+eps) − f(p−eps)) / 2eps` for every scalar
/// of every parameter tensor. `f` must be deterministic.
pub fn finite_diff<T, F>(mut f: F, params: &[Tensor<T>], eps: f64) -> Vec<Vec<f64>>
where
    T: Float,
    F: FnMut(&[Tensor<T>]) -> f64,
{
    let mut work: Vec<Tensor<T>> = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut g = Vec::with_capacity(params[p].numel());
        for i in 0..params[p].numel() {
            let orig = params[p].data()[i];
            work[p].data_mut()[i] = T::lit(orig.as_f64() + eps);
            let up = f(&work);
            work[p].data_mut()[i] = T::lit(orig.as_f64() - eps);
            let down = f(&work);
            work[p].data_mut()[i] = orig;
            g.push((up - down) / (2.0 * eps));
        }
        grads.push(g);
    }
    grads
}

/// `|a − b| / max(|a|, |b|, floor)`; the floor keeps gradients that are zero
/// on both routes from producing 0/0.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    if denom == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic.iter().zip(numeric).map(|(&a, &n)| relative_error(a, n, floor)).fold(0.0, f64::max)
}

/// Counts every quantity by walking samples, never building a matrix.
/// Returns accuracy and per class `[precision, recall, specificity, f1]`,
/// `None` where the denominator is zero.
pub fn tally_oracle(preds: &[usize], targets: &[usize], k: usize) -> (f64, Vec<[Option<f64>; 4]>) {
    let n = preds.len();
    let acc = preds.iter().zip(targets).filter(|(p, t)| p == t).count() as f64 / n as f64;
    let per = (0..k)
        .map(|c| {
            let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
            for (&p, &t) in preds.iter().zip(targets) {
                match (p == c, t == c) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => tn += 1,
                }
            }
            let div = |a: u64, b: u64| (b > 0).then(|| a as f64 / b as f64);
            let p = div(tp, tp + fp);
            let r = div(tp, tp + fn_);
            let f1 = match (p, r) {
                (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
                _ => None,
            };
            [p, r, div(tn, tn + fp), f1]
        })
        .collect();
    (acc, per)
}

/// Straight transcription of the fusion formulas with eval-mode batch norm.
pub fn fusion_oracle(m: &Model<f64>, flow: &Tensor<f64>, fhigh: &Tensor<f64>) -> Vec<f64> {
    let p = |n: &str| m.params.get(n).unwrap().data().to_vec();
    let (w, gamma, beta, mu, var) =
        (p("lgsff.gpw.conv.weight"), p("lgsff.gpw.bn.gamma"), p("lgsff.gpw.bn.beta"), p("lgsff.gpw.bn.running_mean"), p("lgsff.gpw.bn.running_var"));
    let (saw, sab) = (p("lgsff.sa.weight"), p("lgsff.sa.bias")[0]);
    let s = flow.shape();
    let (n, c, h, wd) = (s[0], s[1], s[2], s[3]);
    let g = m.config.lgsff_groups;
    let cg = c / g;
    let at = |t: &[f64], b: usize, ch: usize, y: usize, x: usize| t[((b * c + ch) * h + y) * wd + x];
    let sum: Vec<f64> = flow.data().iter().zip(fhigh.data()).map(|(a, b)| a + b).collect();
    let mut merged = vec![0.0; sum.len()];
    for b in 0..n {
        for o in 0..c {
            let grp = o / cg;
            for y in 0..h {
                for x in 0..wd {
                    let mut acc = 0.0;
                    for i in 0..cg {
                        acc += w[o * cg + i] * at(&sum, b, grp * cg + i, y, x);
                    }
                    let v = gamma[o] * (acc - mu[o]) / (var[o] + 1e-5).sqrt() + beta[o];
                    merged[((b * c + o) * h + y) * wd + x] = v.max(0.0);
                }
            }
        }
    }
    let mut out = vec![0.0; sum.len()];
    for b in 0..n {
        let mut maps = [vec![0.0; h * wd], vec![0.0; h * wd]];
        for y in 0..h {
            for x in 0..wd {
                let vals: Vec<f64> = (0..c).map(|ch| at(&merged, b, ch, y, x)).collect();
                maps[0][y * wd + x] = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                maps[1][y * wd + x] = vals.iter().sum::<f64>() / c as f64;
            }
        }
        for y in 0..h {
            for x in 0..wd {
                let mut sa = sab;
                for (k, map) in maps.iter().enumerate() {
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let (yy, xx) = (y as isize + dy as isize - 1, x as isize + dx as isize - 1);
                            if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < wd {
                                sa += saw[k * 9 + dy * 3 + dx] * map[yy as usize * wd + xx as usize];
                            }
                        }
                    }
                }
                let gate = 1.0 / (1.0 + (-sa).exp());
                for ch in 0..c {
                    let i = ((b * c + ch) * h + y) * wd + x;
                    out[i] = gate * flow.data()[i] + (1.0 - gate) * fhigh.data()[i];
                }
            }
        }
    }
    out
}

