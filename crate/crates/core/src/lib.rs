//! Training-free virtual try-on engine at desk scale.
//!
//! The crate couples a small autodiff runtime (`numerics`) with a DDIM
//! diffusion core (`diffusion`), a trainable noise predictor
//! (`tiny_denoiser`), an apparel localization network with clustering and
//! contour refinement (`localizer`), and the geometry, color and metric
//! support needed by the try-on pipeline (`pipeline`). Synthetic scenes for
//! training and evaluation come from `synthdata`.

pub mod colorspace;
pub mod diffusion;
pub mod evalmetrics;
pub mod geometry;
pub mod localizer;
pub mod numerics;
pub mod pipeline;
pub mod synthdata;
pub mod tiny_denoiser;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Garment vocabulary shared by the localizer prompts, the alignment
/// heuristics and the synthetic scenes. `Clothes` addresses the whole
/// outfit; the rest name a garment type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Clothes,
    Upper,
    Lower,
    Dress,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Clothes, Category::Upper, Category::Lower, Category::Dress];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Clothes => "clothes",
            Category::Upper => "upper",
            Category::Lower => "lower",
            Category::Dress => "dress",
        }
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Category> {
        match s {
            "clothes" => Ok(Category::Clothes),
            "upper" => Ok(Category::Upper),
            "lower" => Ok(Category::Lower),
            "dress" => Ok(Category::Dress),
            other => Err(Error::InvalidArg(format!("unknown category '{other}'"))),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("invalid argument: {0}")]
    InvalidArg(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f32 },
    #[error("index {index} out of range (limit {limit})")]
    IndexRange { index: usize, limit: usize },
    #[error("{0}")]
    Msg(String),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub fn msg(detail: impl Into<String>) -> Self {
        Error::Msg(detail.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
