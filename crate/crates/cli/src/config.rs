use std::path::Path;

use anyhow::{Context, Result};
use earnet::perf::BenchConfig;
use earnet::train::TrainConfig;
use earnet::ModelConfig;
use serde::Deserialize;

/// Contents of a `--config` file. Every section and field is optional;
/// command-line flags and `EARNET_*` variables win over the file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<ModelConfig>,
    pub train: Option<TrainConfig>,
    pub bench: Option<BenchConfig>,
    pub serve: Option<ServeSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub sharpness_gate: Option<f64>,
    pub alpha: Option<f32>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}
