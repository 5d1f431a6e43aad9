//! Synthetic stand-in for otoscope images: a bright canal disc on a dark
//! surround, tinted by a class hue and carrying a class texture.

use std::f32::consts::PI;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::{scan_dataset, ClassCatalog, DatasetIndex, EAR_CLASSES};
use crate::error::{Error, Result};
use crate::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_per_class: usize,
    pub num_classes: usize,
    pub image_size: u32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { n_per_class: 400, num_classes: 9, image_size: 64, seed: 7 }
    }
}

#[derive(Clone, Copy, Debug)]
enum Texture {
    Blobs,
    Rings,
    Streaks,
}

/// Classes share hues in groups of three and textures across groups, so
/// neither colour nor texture alone separates them.
fn class_style(class: usize) -> (f32, Texture) {
    let hues = [8.0, 40.0, 330.0];
    let texture = [Texture::Blobs, Texture::Rings, Texture::Streaks][class % 3];
    (hues[(class / 3) % 3] + 12.0 * (class / 9) as f32, texture)
}

fn hsv(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Renders one image of `class`.
pub fn render(class: usize, size: u32, rng: &mut SeededRng) -> RgbImage {
    let (hue, texture) = class_style(class);
    let hue = hue + rng.random_range(-10.0..10.0);
    let sat = rng.random_range(0.45..0.65);
    let val = rng.random_range(0.55..0.75);
    let base = hsv(hue, sat, val);
    let (cx, cy) = (rng.random_range(-0.12..0.12f32), rng.random_range(-0.12..0.12f32));
    let radius = rng.random_range(0.75..0.92f32);
    let phase = rng.random_range(0.0..2.0 * PI);
    let freq = rng.random_range(10.0..14.0f32);
    let angle = rng.random_range(-0.35..0.35f32) + if class % 2 == 0 { 0.0 } else { PI / 2.0 };
    let blobs: Vec<(f32, f32, f32)> = (0..rng.random_range(3..6))
        .map(|_| {
            let a = rng.random_range(0.0..2.0 * PI);
            let d = rng.random_range(0.0..0.55f32);
            (cx + d * a.cos(), cy + d * a.sin(), rng.random_range(0.1..0.18f32))
        })
        .collect();
    let n = size as f32;
    RgbImage::from_fn(size, size, |px, py| {
        let u = (px as f32 + 0.5) / n * 2.0 - 1.0;
        let v = (py as f32 + 0.5) / n * 2.0 - 1.0;
        let r = ((u - cx).powi(2) + (v - cy).powi(2)).sqrt();
        let noise = rng.random_range(-0.06..0.06f32);
        if r > radius {
            let dark = 0.06 + noise.abs();
            return Rgb([to_u8(dark), to_u8(dark * 0.8), to_u8(dark * 0.7)]);
        }
        let falloff = 1.0 - 0.35 * (r / radius).powi(2);
        let mut rgb = base.map(|c| c * falloff);
        match texture {
            Texture::Blobs => {
                let hit = blobs.iter().any(|&(bx, by, br)| (u - bx).powi(2) + (v - by).powi(2) < br * br);
                if hit {
                    rgb = rgb.map(|c| c * 0.35 + 0.62);
                }
            }
            Texture::Rings => {
                let m = (r * freq * 1.6 + phase).sin();
                rgb = rgb.map(|c| c * (1.0 + 0.35 * m));
            }
            Texture::Streaks => {
                let along = (u - cx) * angle.cos() + (v - cy) * angle.sin();
                let m = (along * freq + phase).sin();
                rgb = rgb.map(|c| c * (1.0 + 0.35 * m.signum()));
            }
        }
        Rgb(rgb.map(|c| to_u8(c + noise)))
    })
}

fn to_u8(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes `out/<class>/<class>_<i>.png` for every class and returns the
/// scanned index. Same spec → byte-identical files.
pub fn synth_generate(spec: &SynthSpec, out: &Path) -> Result<DatasetIndex> {
    if spec.n_per_class == 0 {
        return Err(Error::Input("n_per_class must be at least 1".into()));
    }
    if !(2..=EAR_CLASSES.len()).contains(&spec.num_classes) {
        return Err(Error::Input(format!("num_classes must lie in 2..=9, got {}", spec.num_classes)));
    }
    let catalog = ClassCatalog::default().prefix(spec.num_classes);
    for (class, name) in catalog.names().iter().enumerate() {
        let dir = out.join(name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        // Per-class streams keep a class's images independent of the class count.
        let mut rng = SeededRng::seed_from_u64(spec.seed ^ (class as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        for i in 0..spec.n_per_class {
            let img = render(class, spec.image_size, &mut rng);
            let path = dir.join(format!("{name}_{i:04}.png"));
            img.save(&path).map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
        }
    }
    scan_dataset(out)
}
