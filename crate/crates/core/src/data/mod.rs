//! Image decoding, preprocessing, dataset layout and the synthetic otoscopy set.

pub mod synth;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use synth::{synth_generate, SynthSpec};

pub const MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const STD: [f32; 3] = [0.229, 0.224, 0.225];

/// The nine otoscopic classes, in catalog order.
pub const EAR_CLASSES: [&str; 9] = ["AOM", "CME", "CSOM", "EACB", "IC", "NE", "OE", "SOM", "TMC"];

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCatalog {
    names: Vec<String>,
}

impl Default for ClassCatalog {
    fn default() -> Self {
        Self::sorted(EAR_CLASSES.iter().map(|s| s.to_string()))
    }
}

impl ClassCatalog {
    /// Lexicographic order of the given names, duplicates removed.
    pub fn sorted(names: impl IntoIterator<Item = String>) -> Self {
        let mut names: Vec<String> = names.into_iter().collect();
        names.sort();
        names.dedup();
        Self { names }
    }

    /// Exactly the given order (e.g. from a manifest).
    pub fn ordered(names: Vec<String>) -> Result<Self> {
        let mut seen = names.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != names.len() {
            return Err(Error::Input("duplicate class name in catalog".into()));
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// First `n` classes, for desk-scale runs with fewer classes.
    pub fn prefix(&self, n: usize) -> Self {
        Self { names: self.names.iter().take(n).cloned().collect() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub pixels: RgbImage,
    pub class_id: usize,
    pub path: PathBuf,
    pub sharpness: f64,
}

impl LabeledImage {
    pub fn load(record: &ImageRecord) -> Result<Self> {
        let pixels = decode_image(&record.path)?;
        let sharpness = sharpness(&pixels);
        Ok(Self { pixels, class_id: record.class_id, path: record.path.clone(), sharpness })
    }
}

/// An image file and its label, before decoding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub path: PathBuf,
    pub class_id: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetIndex {
    pub catalog: ClassCatalog,
    pub records: Vec<ImageRecord>,
}

impl DatasetIndex {
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.catalog.len()];
        self.records.iter().for_each(|r| counts[r.class_id] += 1);
        counts
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.class_id).collect()
    }
}

pub fn decode_image(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::Decode { path: path.display().to_string(), msg: e.to_string() })?;
    Ok(img.to_rgb8())
}

pub fn decode_bytes(bytes: &[u8], label: &str) -> Result<RgbImage> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::Decode { path: label.into(), msg: e.to_string() })?;
    Ok(img.to_rgb8())
}

/// Resamples one plane with half-pixel-centred bilinear interpolation
/// (edge samples clamped).
pub fn bilinear_resize(src: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    assert_eq!(src.len(), h * w);
    if (h, w) == (oh, ow) {
        return src.to_vec();
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f32 / out as f32;
        (0..out)
            .map(|o| {
                let pos = ((o as f32 + 0.5) * scale - 0.5).max(0.0);
                let lo = (pos.floor() as usize).min(inp - 1);
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, pos - lo as f32)
            })
            .collect()
    };
    let ys = axis(oh, h);
    let xs = axis(ow, w);
    let mut out = Vec::with_capacity(oh * ow);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// 3×size×size network input: bilinear resize (aspect ratio not kept),
/// scale to [0, 1], then per-channel `(x − mean) / std`.
pub fn preprocess(img: &RgbImage, size: usize) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = Vec::with_capacity(3 * size * size);
    for c in 0..3 {
        let plane: Vec<f32> = img.pixels().map(|p| p.0[c] as f32 / 255.0).collect();
        let resized = bilinear_resize(&plane, h, w, size, size);
        data.extend(resized.into_iter().map(|v| (v - MEAN[c]) / STD[c]));
    }
    Tensor::new(vec![3, size, size], data).expect("shape matches data")
}

/// Inverse of the normalisation, clamped to 8-bit RGB.
pub fn denormalize(t: &Tensor<f32>) -> Result<RgbImage> {
    let s = t.shape();
    let (h, w) = match s {
        [3, h, w] | [1, 3, h, w] => (*h, *w),
        _ => return Err(Error::Shape(format!("expected a 3×H×W image tensor, got {s:?}"))),
    };
    let d = t.data();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Rgb(std::array::from_fn(|c| {
            let v = d[c * h * w + i] * STD[c] + MEAN[c];
            (v * 255.0).round().clamp(0.0, 255.0) as u8
        }))
    }))
}

/// Variance of the 3×3 Laplacian response over the interior of the
/// grayscale image; higher means sharper.
pub fn sharpness(img: &RgbImage) -> f64 {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w < 3 || h < 3 {
        return 0.0;
    }
    let gray: Vec<f64> =
        img.pixels().map(|p| 0.299 * p.0[0] as f64 + 0.587 * p.0[1] as f64 + 0.114 * p.0[2] as f64).collect();
    let mut responses = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let c = y * w + x;
            responses.push(gray[c - w] + gray[c + w] + gray[c - 1] + gray[c + 1] - 4.0 * gray[c]);
        }
    }
    let n = responses.len() as f64;
    let mean = responses.iter().sum::<f64>() / n;
    responses.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n
}

/// Score below which a fraction `q` of `scores` falls (nearest rank).
pub fn sharpness_threshold(scores: &[f64], q: f64) -> Option<f64> {
    if scores.is_empty() {
        return None;
    }
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((q.clamp(0.0, 1.0) * s.len() as f64).ceil() as usize).clamp(1, s.len());
    Some(s[rank - 1])
}

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

/// Lists `root/<class>/*.{png,jpg,jpeg}`, or the rows of `root/manifest.csv`
/// (`path,class`, paths relative to `root`) when present.
pub fn scan_dataset(root: &Path) -> Result<DatasetIndex> {
    let manifest = root.join("manifest.csv");
    if manifest.is_file() {
        return read_manifest(root, &manifest);
    }
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        log::warn!("no class directories under {}", root.display());
    }
    let catalog = ClassCatalog::sorted(class_dirs.iter().filter_map(|d| d.file_name()?.to_str().map(String::from)));
    let mut records = Vec::new();
    for dir in &class_dirs {
        let Some(name) = dir.file_name().and_then(|n| n.to_str()) else { continue };
        let class_id = catalog.id(name).expect("catalog built from these names");
        let mut found = 0;
        for path in sorted_entries(dir)? {
            if !path.is_file() {
                continue;
            }
            if has_image_extension(&path) {
                records.push(ImageRecord { path, class_id });
                found += 1;
            } else {
                log::info!("skipping {}: not an image extension", path.display());
            }
        }
        if found == 0 {
            log::warn!("class directory {} holds no images", dir.display());
        }
    }
    records.sort_by(|a, b| (a.class_id, &a.path).cmp(&(b.class_id, &b.path)));
    Ok(DatasetIndex { catalog, records })
}

fn read_manifest(root: &Path, manifest: &Path) -> Result<DatasetIndex> {
    let src = manifest.display().to_string();
    let mut reader = csv::Reader::from_path(manifest).map_err(|e| Error::Csv { path: src.clone(), msg: e.to_string() })?;
    let mut rows = Vec::new();
    let mut names = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Csv { path: src.clone(), msg: e.to_string() })?;
        let (Some(path), Some(class)) = (rec.get(0), rec.get(1)) else {
            return Err(Error::Csv { path: src.clone(), msg: "rows need `path,class`".into() });
        };
        if !names.iter().any(|n| n == class) {
            names.push(class.to_string());
        }
        rows.push((root.join(path), class.to_string()));
    }
    let catalog = ClassCatalog::ordered(names)?;
    let mut records: Vec<ImageRecord> =
        rows.into_iter().map(|(path, c)| ImageRecord { path, class_id: catalog.id(&c).expect("seen") }).collect();
    records.sort_by(|a, b| (a.class_id, &a.path).cmp(&(b.class_id, &b.path)));
    Ok(DatasetIndex { catalog, records })
}

/// Preprocessed inputs held contiguously for training and evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorDataset {
    pub catalog: ClassCatalog,
    pub input_size: usize,
    inputs: Vec<f32>,
    pub labels: Vec<usize>,
}

impl TensorDataset {
    pub fn from_index(index: &DatasetIndex, input_size: usize) -> Result<Self> {
        let mut inputs = Vec::with_capacity(index.records.len() * 3 * input_size * input_size);
        for r in &index.records {
            let img = decode_image(&r.path)?;
            inputs.extend_from_slice(preprocess(&img, input_size).data());
        }
        Ok(Self { catalog: index.catalog.clone(), input_size, inputs, labels: index.labels() })
    }

    pub fn from_parts(catalog: ClassCatalog, input_size: usize, inputs: Vec<f32>, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != labels.len() * 3 * input_size * input_size {
            return Err(Error::Shape(format!("{} input values for {} labels", inputs.len(), labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= catalog.len()) {
            return Err(Error::Input(format!("label {bad} outside {} classes", catalog.len())));
        }
        Ok(Self { catalog, input_size, inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn sample(&self, i: usize) -> &[f32] {
        let n = 3 * self.input_size * self.input_size;
        &self.inputs[i * n..(i + 1) * n]
    }

    /// Stacks the given samples into an N×3×S×S batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let s = self.input_size;
        let data = indices.iter().flat_map(|&i| self.sample(i).iter().copied()).collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (Tensor::new(vec![indices.len(), 3, s, s], data).expect("shape matches data"), labels)
    }

    /// Keeps only samples of `classes`, relabelled 0.. in the given order.
    pub fn subset_classes(&self, classes: &[usize]) -> Result<Self> {
        let names = classes
            .iter()
            .map(|&c| self.catalog.name(c).map(String::from).ok_or_else(|| Error::Input(format!("no class {c}"))))
            .collect::<Result<Vec<_>>>()?;
        let remap: BTreeMap<usize, usize> = classes.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(&new) = remap.get(l) {
                inputs.extend_from_slice(self.sample(i));
                labels.push(new);
            }
        }
        Self::from_parts(ClassCatalog::ordered(names)?, self.input_size, inputs, labels)
    }
}

#[cfg(test)]
mod tests;
