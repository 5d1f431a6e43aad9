//! Grad-CAM heatmaps and colour overlays.

use image::{Rgb, RgbImage};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::bilinear_resize;
use crate::error::{Error, Result};
use crate::model::{Mode, Model};
use crate::tensor::{Float, Tape, Tensor, Var};
use crate::SeededRng;

/// Spatial tensor the map is computed on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetLayer {
    /// Fusion output of the fused model, final feature map of the baseline.
    #[default]
    Fusion,
    Stage2,
    Stage3,
    Stage4,
    Fhigh,
}

impl std::str::FromStr for TargetLayer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fusion" | "lgsff" => Self::Fusion,
            "stage2" => Self::Stage2,
            "stage3" => Self::Stage3,
            "stage4" => Self::Stage4,
            "fhigh" => Self::Fhigh,
            other => return Err(Error::Input(format!("unknown layer `{other}`"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    /// Row-major, in [0, 1].
    pub values: Vec<f32>,
    pub target_class: usize,
    pub layer: TargetLayer,
    /// Set when the rectified map is zero everywhere.
    pub degenerate: bool,
}

impl Heatmap {
    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }

    /// The map through the colour ramp.
    pub fn to_image(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| Rgb(colormap(self.at(y as usize, x as usize))))
    }
}

/// `ReLU(Σ_c mean(∂score/∂A_c) · A_c)` at activation resolution, from a
/// 1×C×h×w activation and its gradient.
pub fn cam_map<T: Float>(activation: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<f64>> {
    let (n, c, h, w) = activation.dims4()?;
    if n != 1 || grad.shape() != activation.shape() {
        return Err(Error::Shape(format!("cam needs one activation and a matching gradient, got {:?} and {:?}", activation.shape(), grad.shape())));
    }
    let hw = h * w;
    let (a, g) = (activation.data(), grad.data());
    let mut map = vec![0.0f64; hw];
    for ch in 0..c {
        let weight = g[ch * hw..(ch + 1) * hw].iter().map(|v| v.as_f64()).sum::<f64>() / hw as f64;
        for (m, v) in map.iter_mut().zip(&a[ch * hw..(ch + 1) * hw]) {
            *m += weight * v.as_f64();
        }
    }
    map.iter_mut().for_each(|m| *m = m.max(0.0));
    Ok(map)
}

/// Backpropagates `score` and turns `activation` into a normalised heatmap
/// of `out_h × out_w`.
pub fn cam_on_tape<T: Float>(tape: &mut Tape<T>, activation: Var, score: Var, out_h: usize, out_w: usize) -> Result<(Vec<f32>, bool)> {
    if !tape.requires_grad(activation) {
        return Err(Error::Contract("activation is not on a gradient path".into()));
    }
    tape.backward(score)?;
    let grad = tape.grad_tensor(activation);
    let map = cam_map(tape.value(activation), &grad)?;
    let (_, _, h, w) = tape.value(activation).dims4()?;
    let small: Vec<f32> = map.iter().map(|&v| v as f32).collect();
    Ok(normalize(bilinear_resize(&small, h, w, out_h, out_w)))
}

/// Min-max to [0, 1]. A flat positive map becomes all ones; an all-zero map
/// stays zero and is flagged.
fn normalize(mut v: Vec<f32>) -> (Vec<f32>, bool) {
    let max = v.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let min = v.iter().copied().fold(f32::INFINITY, f32::min);
    if !(max > 0.0) {
        v.iter_mut().for_each(|x| *x = 0.0);
        return (v, true);
    }
    let span = max - min;
    if span <= max * 1e-6 {
        v.iter_mut().for_each(|x| *x = 1.0);
    } else {
        v.iter_mut().for_each(|x| *x = ((*x - min) / span).clamp(0.0, 1.0));
    }
    (v, false)
}

/// Grad-CAM for one image (3×S×S or 1×3×S×S). `target` defaults to the
/// predicted class. The model must be in eval mode and is not modified.
pub fn grad_cam<T: Float>(model: &Model<T>, image: &Tensor<T>, target: Option<usize>, layer: TargetLayer) -> Result<Heatmap> {
    if model.mode != Mode::Eval {
        return Err(Error::Contract("grad_cam needs an eval-mode model".into()));
    }
    let s = model.config.input_size;
    let x = match image.shape() {
        [3, _, _] => image.clone().reshape(vec![1, 3, s, s])?,
        _ => image.clone(),
    };
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    // A gradient-tracking input puts every activation on the gradient path.
    let xv = tape.leaf(x, true);
    let mut rng = SeededRng::seed_from_u64(0);
    let out = model.forward(&mut tape, &bound, xv, &mut rng)?;
    let classes = model.config.num_classes;
    let target = match target {
        Some(t) if t >= classes => return Err(Error::Input(format!("class {t} outside 0..{classes}"))),
        Some(t) => t,
        None => tape.value(out.logits3).argmax_rows()[0],
    };
    let act = match layer {
        TargetLayer::Fusion => Some(out.lgsff),
        TargetLayer::Stage2 => Some(out.stages.stage2),
        TargetLayer::Stage3 => Some(out.stages.stage3),
        TargetLayer::Stage4 => Some(out.stages.stage4),
        TargetLayer::Fhigh => out.stages.fhigh,
    }
    .ok_or_else(|| Error::Input(format!("{layer:?} activations are not produced by {}", model.kind.name())))?;
    let logit = tape.narrow(out.logits3, 1, target, 1)?;
    let score = tape.sum(logit)?;
    let (values, degenerate) = cam_on_tape(&mut tape, act, score, s, s)?;
    Ok(Heatmap { height: s, width: s, values, target_class: target, layer, degenerate })
}

/// Blue → cyan → yellow → red ramp.
pub fn colormap(v: f32) -> [u8; 3] {
    let t = v.clamp(0.0, 1.0);
    let ramp = |x: f32| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    [ramp(2.0 * t - 0.5), ramp(if t < 0.5 { 2.0 * t + 0.25 } else { 2.25 - 2.0 * t }), ramp(1.5 - 2.0 * t)]
}

/// `(1 − alpha)·image + alpha·colormap(heatmap)` per pixel.
pub fn overlay(heatmap: &Heatmap, image: &RgbImage, alpha: f32) -> Result<RgbImage> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Input(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if (image.width() as usize, image.height() as usize) != (heatmap.width, heatmap.height) {
        return Err(Error::Shape(format!(
            "heatmap is {}×{} but image is {}×{}",
            heatmap.height,
            heatmap.width,
            image.height(),
            image.width()
        )));
    }
    Ok(RgbImage::from_fn(image.width(), image.height(), |x, y| {
        let base = image.get_pixel(x, y).0;
        let heat = colormap(heatmap.at(y as usize, x as usize));
        let mix = |b: u8, h: u8| ((1.0 - alpha) * b as f32 + alpha * h as f32).round() as u8;
        Rgb([mix(base[0], heat[0]), mix(base[1], heat[1]), mix(base[2], heat[2])])
    }))
}

#[cfg(test)]
mod tests;
