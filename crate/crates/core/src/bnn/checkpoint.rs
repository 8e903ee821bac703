use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{HyperParams, VariationalPosterior};
use crate::error::{Error, Result};
use crate::numerics::Real;

pub const CHECKPOINT_FORMAT: &str = "bvcl-posterior";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON posterior document. Floats are written in shortest round-trip form,
/// so every `mu` / `log_sigma` value reads back bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorCheckpoint<T> {
    pub format: String,
    pub version: u32,
    /// Task name for each head, in head order.
    pub task_names: Vec<String>,
    pub hyper: HyperParams,
    pub posterior: VariationalPosterior<T>,
}

impl<T: Real> PosteriorCheckpoint<T> {
    pub fn new(posterior: VariationalPosterior<T>, hyper: HyperParams, task_names: Vec<String>) -> Self {
        PosteriorCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            task_names,
            hyper,
            posterior,
        }
    }
}

pub fn save_checkpoint<T: Real + Serialize>(ckpt: &PosteriorCheckpoint<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text =
        serde_json::to_string(ckpt).map_err(|e| Error::NumericFailure(format!("cannot serialize checkpoint: {e}")))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real + DeserializeOwned>(path: impl AsRef<Path>) -> Result<PosteriorCheckpoint<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let malformed = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let ckpt: PosteriorCheckpoint<T> = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
        return Err(malformed(format!(
            "unsupported checkpoint {} v{}",
            ckpt.format, ckpt.version
        )));
    }
    if ckpt.task_names.len() != ckpt.posterior.num_heads() {
        return Err(malformed("task_names length differs from head count".into()));
    }
    ckpt.posterior.validate().map_err(|e| malformed(e.to_string()))?;
    Ok(ckpt)
}
