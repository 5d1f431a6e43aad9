//! Per-frame inference, session logs and the latest-frame slot used by the
//! streaming service.

use std::fs::OpenOptions;
use std::io::{Cursor, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use base64::Engine as _;
use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use crate::data::{decode_bytes, denormalize, preprocess, sharpness, ClassCatalog};
use crate::error::{Error, Result};
use crate::explain::{grad_cam, overlay, TargetLayer};
use crate::model::Model;

/// Laplacian-variance gate: 10th percentile of the default synthetic set's
/// sharpness scores.
pub const DEFAULT_SHARPNESS_GATE: f64 = 1370.4646481163768;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferOptions {
    pub heatmap: bool,
    pub sharpness_gate: f64,
    /// Overlay opacity of the heatmap.
    pub alpha: f32,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self { heatmap: false, sharpness_gate: DEFAULT_SHARPNESS_GATE, alpha: 0.45 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FramePrediction {
    pub classes: Vec<String>,
    pub probabilities: Vec<f64>,
    pub top1: String,
    pub top1_index: usize,
    pub top1_probability: f64,
    pub latency_ms: f64,
    pub sharpness: f64,
    /// Below the sharpness gate; the frame is answered but not logged.
    pub blurry: bool,
    /// Base64 PNG of the Grad-CAM overlay at network input size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heatmap: Option<String>,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<String>,
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

/// Softmax in f64 so the result sums to one well inside 1e-6.
pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exp: Vec<f64> = logits.iter().map(|&l| (l as f64 - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

pub fn png_bytes(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(|e| Error::Contract(format!("png encoding: {e}")))?;
    Ok(buf.into_inner())
}

/// Decodes, preprocesses and classifies one frame. The heatmap, when asked
/// for, is computed in a separate pass and leaves the probabilities alone.
pub fn infer_frame(model: &Model<f32>, catalog: &ClassCatalog, bytes: &[u8], opts: &InferOptions) -> Result<FramePrediction> {
    let start = Instant::now();
    if catalog.len() != model.config.num_classes {
        return Err(Error::Config(format!("{} class names for {} outputs", catalog.len(), model.config.num_classes)));
    }
    let img = decode_bytes(bytes, "frame")?;
    let sharp = sharpness(&img);
    let s = model.config.input_size;
    let x = preprocess(&img, s).reshape(vec![1, 3, s, s])?;
    let logits = model.logits(&x)?;
    let probabilities = softmax(logits.data());
    let top1_index = logits.argmax_rows()[0];
    let heatmap = if opts.heatmap {
        let cam = grad_cam(model, &x, Some(top1_index), TargetLayer::Fusion)?;
        let blended = overlay(&cam, &denormalize(&x)?, opts.alpha)?;
        Some(base64::engine::general_purpose::STANDARD.encode(png_bytes(&blended)?))
    } else {
        None
    };
    Ok(FramePrediction {
        classes: catalog.names().to_vec(),
        top1: catalog.name(top1_index).unwrap_or_default().to_string(),
        top1_probability: probabilities[top1_index],
        probabilities,
        top1_index,
        latency_ms: start.elapsed().as_secs_f64() * 1e3,
        sharpness: sharp,
        blurry: sharp < opts.sharpness_gate,
        heatmap,
        timestamp_ms: now_ms(),
        session: None,
    })
}

/// Session ids become file names, so they are restricted to
/// `[A-Za-z0-9_-]{1,64}`.
pub fn validate_session_id(id: &str) -> Result<()> {
    let ok = !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_');
    if ok {
        Ok(())
    } else {
        Err(Error::Input(format!("invalid session id `{id}`")))
    }
}

/// Append-only JSON-lines log of one session, `<dir>/<id>.jsonl`. Each
/// record is written with a single append and synced before returning.
#[derive(Debug)]
pub struct SessionLog {
    path: PathBuf,
    last_ts: Mutex<u64>,
}

impl SessionLog {
    pub fn open(dir: &Path, id: &str) -> Result<Self> {
        validate_session_id(id)?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("{id}.jsonl"));
        let last = read_log(&path)?.last().map_or(0, |p| p.timestamp_ms);
        Ok(Self { path, last_ts: Mutex::new(last) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends `pred`, nudging its timestamp forward if the clock stepped back.
    pub fn append(&self, pred: &FramePrediction) -> Result<FramePrediction> {
        let mut last = self.last_ts.lock().unwrap_or_else(|p| p.into_inner());
        let mut rec = pred.clone();
        rec.timestamp_ms = rec.timestamp_ms.max(*last);
        let mut line = serde_json::to_vec(&rec).expect("serialisable");
        line.push(b'\n');
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path).map_err(|e| Error::io(&self.path, e))?;
        f.write_all(&line).map_err(|e| Error::io(&self.path, e))?;
        f.sync_data().map_err(|e| Error::io(&self.path, e))?;
        *last = rec.timestamp_ms;
        Ok(rec)
    }
}

/// Reads every complete record. A torn final line (crash mid-write) is
/// skipped; a malformed line elsewhere is an error.
pub fn read_log(path: &Path) -> Result<Vec<FramePrediction>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str(line) {
            Ok(p) => out.push(p),
            Err(_) if i + 1 == lines.len() && !complete => break,
            Err(e) => return Err(Error::Decode { path: path.display().to_string(), msg: format!("line {}: {e}", i + 1) }),
        }
    }
    Ok(out)
}

/// Single-slot mailbox: a new value replaces any unconsumed one and the
/// replacement is counted as a drop.
#[derive(Debug)]
pub struct LatestSlot<T> {
    inner: Mutex<(Option<T>, u64)>,
}

impl<T> Default for LatestSlot<T> {
    fn default() -> Self {
        Self { inner: Mutex::new((None, 0)) }
    }
}

impl<T> LatestSlot<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `value`; returns true when an older value was dropped.
    pub fn put(&self, value: T) -> bool {
        let mut g = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        let dropped = g.0.replace(value).is_some();
        if dropped {
            g.1 += 1;
        }
        dropped
    }

    pub fn take(&self) -> Option<T> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner()).0.take()
    }

    pub fn dropped(&self) -> u64 {
        self.inner.lock().unwrap_or_else(|p| p.into_inner()).1
    }
}

#[cfg(test)]
mod tests;
