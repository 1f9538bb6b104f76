//! Model checkpoints: a JSON document holding the format tag, version,
//! training configuration, gate threshold and every tensor. Floats are
//! written in shortest round-trip form, so a reload is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use pmp_core::{GcnModel, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{FormatError, Result};

pub const CHECKPOINT_FORMAT: &str = "pmp-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Training configuration the model came from, if any.
    pub train: Option<TrainConfig>,
    pub threshold: f64,
    pub observed_pr: f64,
    /// Latent (un-exported) weights together with the gate configuration.
    pub model: GcnModel,
}

impl Checkpoint {
    pub fn new(model: GcnModel, train: Option<TrainConfig>, threshold: f64, observed_pr: f64) -> Self {
        Self { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, train, threshold, observed_pr, model }
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let file = File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, ckpt).map_err(|e| FormatError::io(path, e.into()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| FormatError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| FormatError::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| FormatError::parse(path, e.line() as u64, e.to_string()))?;
    if ckpt.format != CHECKPOINT_FORMAT {
        return Err(FormatError::schema(path, format!("not a checkpoint (format tag '{}')", ckpt.format)));
    }
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(FormatError::Version {
            path: path.to_path_buf(),
            what: "checkpoint",
            found: ckpt.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    ckpt.model.config.validate()?;
    Ok(ckpt)
}
