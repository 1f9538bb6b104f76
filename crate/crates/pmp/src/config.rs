//! Experiment configuration, read from TOML. Unknown keys are rejected at
//! every level.
//!
//! ```toml
//! version = 1
//! output_dir = "gauss-55"        # relative to the output root
//! record_wall_time = true
//!
//! [dataset.synth]                # or [dataset.file] path = "...", format = "jsonl", chunks = 32
//! joints = 14
//! classes = 5
//! per_class = 60
//! frames = 64
//! noise_std = 0.01
//! seed = 0
//!
//! [model]
//! heads = 8
//!
//! [train]
//! rate = 0.55
//! target = { kind = "gaussian", mean = 0.0, std = 0.07 }
//!
//! [sweep]
//! rates = [0.55, 0.98]
//! targets = ["gaussian", "laplace"]
//! seeds = [0]
//! ```

use std::path::{Path, PathBuf};

use pmp_core::distributions::Law;
use pmp_core::{Dataset, GcnConfig, SynthSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::dataset_io::{load_dataset, DataFormat};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Syntax {
        path: PathBuf,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl ToString) -> ConfigError {
    ConfigError::Invalid { field: field.into(), message: message.to_string() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "config_version")]
    pub version: u32,
    /// Output directory, relative to the output root unless absolute.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Off makes report rows byte-reproducible (`wall_time` is written as 0).
    #[serde(default = "yes")]
    pub record_wall_time: bool,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

fn config_version() -> u32 {
    CONFIG_VERSION
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Synth(SynthSpec),
    File(FileSource),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSource {
    pub path: PathBuf,
    /// Inferred from the extension when absent.
    #[serde(default)]
    pub format: Option<DataFormat>,
    #[serde(default = "default_chunks")]
    pub chunks: usize,
}

fn default_chunks() -> usize {
    32
}

/// Layer widths of the GCN; input size, classes and adjacency come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub filters: usize,
    pub dense_dim: usize,
    pub blocks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { embed_dim: 16, heads: 8, filters: 32, dense_dim: 64, blocks: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub rates: Vec<f64>,
    pub targets: Vec<SweepTarget>,
    /// Defaults to `[train.seed]`.
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Adds one magnitude-pruning row per (rate, seed).
    #[serde(default = "yes")]
    pub include_mp: bool,
}

/// A sweep target: a named family scaled to `omega`, or an explicit law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepTarget {
    Named(TargetName),
    Law(Law),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetName {
    Gaussian,
    Laplace,
    Uniform,
    /// No KL term (`λ = 0`); the gate still uses the configured target's threshold.
    None,
}

impl SweepTarget {
    /// Label used in the report's `target_kind` column.
    pub fn kind(&self) -> &'static str {
        match self {
            SweepTarget::Named(TargetName::None) => "none",
            SweepTarget::Named(TargetName::Gaussian) | SweepTarget::Law(Law::Gaussian { .. }) => "gaussian",
            SweepTarget::Named(TargetName::Laplace) | SweepTarget::Law(Law::Laplace { .. }) => "laplace",
            SweepTarget::Named(TargetName::Uniform) | SweepTarget::Law(Law::Uniform { .. }) => "uniform",
        }
    }

    /// Training config for this target at `rate` and `seed`.
    ///
    /// Named families centre on the middle of `omega` with half-width `h`:
    /// gaussian std `0.35h`, laplace scale `0.25h`, uniform half-width `h`.
    pub fn apply(&self, base: &TrainConfig, rate: f64, seed: u64) -> TrainConfig {
        let (lo, hi) = base.omega;
        let mid = 0.5 * (lo + hi);
        let h = 0.5 * (hi - lo);
        let mut cfg = TrainConfig { rate, seed, ..base.clone() };
        match *self {
            SweepTarget::Named(TargetName::Gaussian) => cfg.target = Law::Gaussian { mean: mid, std: 0.35 * h },
            SweepTarget::Named(TargetName::Laplace) => cfg.target = Law::Laplace { loc: mid, scale: 0.25 * h },
            SweepTarget::Named(TargetName::Uniform) => cfg.target = Law::Uniform { half_width: h },
            SweepTarget::Named(TargetName::None) => cfg.lambda = 0.0,
            SweepTarget::Law(law) => cfg.target = law,
        }
        cfg
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)
            .map_err(|e| ConfigError::Syntax { path: path.to_path_buf(), source: Box::new(e) })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError::Read { path: path.to_path_buf(), source: e })?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(invalid("version", format!("unsupported version {} (expected {CONFIG_VERSION})", self.version)));
        }
        match &self.dataset {
            DatasetSource::Synth(s) => s.validate().map_err(|e| invalid("dataset.synth", e))?,
            DatasetSource::File(f) if f.chunks == 0 => return Err(invalid("dataset.file.chunks", "must be positive")),
            DatasetSource::File(f) => {
                DataFormat::resolve(f.format, &f.path).map_err(|e| invalid("dataset.file.format", e))?;
            }
        }
        let m = &self.model;
        for (name, v) in
            [("embed_dim", m.embed_dim), ("heads", m.heads), ("filters", m.filters), ("dense_dim", m.dense_dim), ("blocks", m.blocks)]
        {
            if v == 0 {
                return Err(invalid(&format!("model.{name}"), "must be positive"));
            }
        }
        check_train("train", &self.train)?;
        if let Some(s) = &self.sweep {
            if s.rates.is_empty() {
                return Err(invalid("sweep.rates", "must not be empty"));
            }
            if s.targets.is_empty() {
                return Err(invalid("sweep.targets", "must not be empty"));
            }
            for (i, &r) in s.rates.iter().enumerate() {
                for (j, t) in s.targets.iter().enumerate() {
                    check_train(&format!("sweep.rates[{i}] x sweep.targets[{j}]"), &t.apply(&self.train, r, 0))?;
                }
            }
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        match &self.sweep {
            Some(s) if !s.seeds.is_empty() => s.seeds.clone(),
            _ => vec![self.train.seed],
        }
    }

    /// Loads or generates the dataset. File paths are relative to `base_dir`.
    pub fn dataset(&self, base_dir: &Path) -> anyhow::Result<Dataset> {
        Ok(match &self.dataset {
            DatasetSource::Synth(s) => s.dataset()?,
            DatasetSource::File(f) => {
                let path = base_dir.join(&f.path);
                let format = DataFormat::resolve(f.format, &path)?;
                load_dataset(&path, format, f.chunks)?
            }
        })
    }

    pub fn gcn_config(&self, data: &Dataset) -> anyhow::Result<GcnConfig> {
        let mut g = GcnConfig::new(data.raw_dim(), data.classes(), data.adjacency.clone())?;
        g.embed_dim = self.model.embed_dim;
        g.heads = self.model.heads;
        g.filters = self.model.filters;
        g.dense_dim = self.model.dense_dim;
        g.blocks = self.model.blocks;
        g.validate()?;
        Ok(g)
    }
}

fn check_train(field: &str, t: &TrainConfig) -> Result<(), ConfigError> {
    t.validate().map_err(|e| {
        let message = e.to_string();
        let key = ["rate", "lambda", "epochs", "batch_size", "lr", "sigma", "omega", "bins"]
            .into_iter()
            .find(|k| message.contains(k))
            .map(|k| format!("{field}.{k}"))
            .unwrap_or_else(|| field.to_string());
        invalid(&key, message)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[dataset.synth]\njoints = 5\nclasses = 2\nper_class = 4\nframes = 8\nnoise_std = 0.01\nseed = 0\n";

    fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        ExperimentConfig::from_toml_str(text, Path::new("test.toml"))
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = parse(MINIMAL).unwrap();
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.model, ModelConfig::default());
        assert!(cfg.record_wall_time);
    }

    #[test]
    fn rate_one_is_rejected() {
        let err = parse(&format!("{MINIMAL}[train]\nrate = 1.0\n")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("train.rate:"), "{msg}");
        assert!(msg.contains("0 <= r < 1"), "{msg}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(parse(&format!("{MINIMAL}[train]\nrtae = 0.5\n")), Err(ConfigError::Syntax { .. })));
        assert!(matches!(parse(&format!("colour = 1\n{MINIMAL}")), Err(ConfigError::Syntax { .. })));
        assert!(matches!(parse(&format!("{MINIMAL}[model]\nhead = 2\n")), Err(ConfigError::Syntax { .. })));
    }

    #[test]
    fn empty_sweep_lists() {
        let err = parse(&format!("{MINIMAL}[sweep]\nrates = []\ntargets = [\"gaussian\"]\n")).unwrap_err();
        assert!(err.to_string().starts_with("sweep.rates"));
        let err = parse(&format!("{MINIMAL}[sweep]\nrates = [0.5]\ntargets = []\n")).unwrap_err();
        assert!(err.to_string().starts_with("sweep.targets"));
    }

    #[test]
    fn sweep_targets_named_and_explicit() {
        let cfg = parse(&format!(
            "{MINIMAL}[sweep]\nrates = [0.5]\ntargets = [\"laplace\", \"none\", {{ kind = \"uniform\", half_width = 0.1 }}]\n"
        ))
        .unwrap();
        let s = cfg.sweep.as_ref().unwrap();
        let kinds: Vec<_> = s.targets.iter().map(|t| t.kind()).collect();
        assert_eq!(kinds, ["laplace", "none", "uniform"]);
        let base = TrainConfig::default();
        assert_eq!(s.targets[0].apply(&base, 0.5, 3).target, Law::Laplace { loc: 0.0, scale: 0.05 });
        assert_eq!(s.targets[1].apply(&base, 0.5, 3).lambda, 0.0);
        assert_eq!(s.targets[2].apply(&base, 0.5, 3).target, Law::Uniform { half_width: 0.1 });
        assert_eq!(cfg.seeds(), vec![0]);
    }

    #[test]
    fn toml_round_trip() {
        let cfg = parse(&format!("{MINIMAL}[sweep]\nrates = [0.5, 0.9]\ntargets = [\"gaussian\"]\nseeds = [1, 2]\n")).unwrap();
        assert_eq!(parse(&cfg.to_toml_string()).unwrap(), cfg);
    }
}
