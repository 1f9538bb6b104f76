//! CSV dumps of the gate, the discretized target and the latent-weight
//! histogram of a checkpoint.

use std::path::{Path, PathBuf};

use anyhow::Context;
use pmp_core::bandstop::gate_curve;
use pmp_core::histogram::soft_histogram_values;
use pmp_core::{BandStopConfig, Tensor, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::checkpoint::load_checkpoint;
use crate::report::{Columns, CSV_SCHEMA_VERSION};

pub const CURVE_POINTS: usize = 400;
pub const PSI_FILE: &str = "psi.csv";
pub const TARGET_FILE: &str = "target.csv";
pub const OBSERVED_FILE: &str = "observed.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiRow {
    pub schema: u32,
    pub w: f64,
    pub psi: f64,
    /// `w · ψ(w)`.
    pub effective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub schema: u32,
    pub bin: usize,
    pub center: f64,
    pub width: f64,
    pub mass: f64,
}

impl Columns for PsiRow {
    const COLUMNS: &'static [&'static str] = &["schema", "w", "psi", "effective"];
}

impl Columns for BinRow {
    const COLUMNS: &'static [&'static str] = &["schema", "bin", "center", "width", "mass"];
}

#[derive(Clone, Debug, Default)]
pub struct CurveRequest<'a> {
    pub checkpoint: Option<&'a Path>,
    /// Dump the checkpoint's latent-weight histogram too.
    pub observed: bool,
    /// Gate overrides; otherwise the threshold comes from the config (or the checkpoint).
    pub a: Option<f64>,
    pub sigma: Option<f64>,
}

fn bins(grid: &pmp_core::BinGrid, mass: &[f64]) -> Vec<BinRow> {
    grid.centers()
        .iter()
        .zip(grid.widths())
        .zip(mass)
        .enumerate()
        .map(|(bin, ((&center, &width), &mass))| BinRow { schema: CSV_SCHEMA_VERSION, bin, center, width, mass })
        .collect()
}

/// Writes `psi.csv`, `target.csv` and, when requested, `observed.csv`.
pub fn dump_curves(train: &TrainConfig, req: &CurveRequest, out_dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    train.validate()?;
    if req.observed && req.checkpoint.is_none() {
        anyhow::bail!("observed histogram requested but no checkpoint was given");
    }
    let ckpt = req.checkpoint.map(load_checkpoint).transpose()?;
    let grid = train.grid()?;
    let (lo, hi) = grid.omega();
    let default_a = match &ckpt {
        Some(c) => c.threshold,
        None => train.threshold()?,
    };
    let gate = BandStopConfig::new(req.a.unwrap_or(default_a), req.sigma.unwrap_or(train.sigma_schedule.sigma_at(0)))?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let psi: Vec<PsiRow> = gate_curve(&gate, lo, hi, CURVE_POINTS)
        .into_iter()
        .map(|(w, psi, effective)| PsiRow { schema: CSV_SCHEMA_VERSION, w, psi, effective })
        .collect();
    let mut written = vec![out_dir.join(PSI_FILE), out_dir.join(TARGET_FILE)];
    crate::report::write_csv(&written[0], &psi)?;
    let p = train.target_distribution()?.discretize(&grid)?;
    crate::report::write_csv(&written[1], &bins(&grid, p.probs()))?;

    if req.observed {
        let model = &ckpt.as_ref().expect("checked above").model;
        let latents: Vec<&Tensor> = model.prunable_layers().iter().map(|l| &l.latent).collect();
        let q = soft_histogram_values(&latents, &grid)?;
        let path = out_dir.join(OBSERVED_FILE);
        crate::report::write_csv(&path, &bins(&grid, &q))?;
        written.push(path);
    }
    Ok(written)
}
