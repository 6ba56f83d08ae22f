//! On-disk run configuration: the full pipeline settings plus the input
//! and output paths a try-on run needs. Unknown keys are rejected at both
//! levels so typos fail loudly instead of silently using defaults.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dtrend_core::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub model_image: Option<PathBuf>,
    pub garment_image: Option<PathBuf>,
    pub localizer: Option<PathBuf>,
    pub denoiser: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let rc: RunConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    rc.pipeline.validate()?;
    Ok(rc)
}
