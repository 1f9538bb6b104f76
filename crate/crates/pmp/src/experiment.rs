//! Single runs and sweeps.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use pmp_core::train::{kld_trend, train_mp_baseline, train_pmp};
use pmp_core::{Dataset, Error as CoreError, GcnConfig, TrainConfig, TrainOutcome};
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::config::{ExperimentConfig, SweepTarget};
use crate::report::{summarize, write_csv, write_metrics, write_report, FailureRow, ReportRow, MP_KIND};

pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const DIAGNOSTIC_FILE: &str = "diagnostic.json";
pub const FAILURES_FILE: &str = "failures.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Which trainer a job uses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    Pmp(SweepTarget),
    Mp,
}

impl Method {
    pub fn kind(&self) -> &'static str {
        match self {
            Method::Pmp(t) => t.kind(),
            Method::Mp => MP_KIND,
        }
    }
}

/// Written to the output directory when training diverges.
#[derive(Debug, Serialize)]
struct Diagnostic<'a> {
    error: String,
    epoch: usize,
    train: &'a TrainConfig,
}

pub struct RunArtifacts {
    pub row: ReportRow,
    pub outcome: TrainOutcome,
    pub metrics: PathBuf,
    pub report: PathBuf,
    pub checkpoint: PathBuf,
}

fn accuracy_of(outcome: &TrainOutcome) -> anyhow::Result<f64> {
    outcome.test_accuracy.context("the dataset has no test sequences; accuracy is undefined")
}

/// Trains one model and builds its report row.
pub fn train_one(
    data: &Dataset,
    gcn: &GcnConfig,
    cfg: &TrainConfig,
    method: Method,
    record_wall_time: bool,
) -> pmp_core::Result<(ReportRow, TrainOutcome)> {
    let start = Instant::now();
    let outcome = match method {
        Method::Pmp(_) => train_pmp(data, gcn, cfg)?,
        Method::Mp => train_mp_baseline(data, gcn, cfg)?,
    };
    let wall_time = if record_wall_time { start.elapsed().as_secs_f64() } else { 0.0 };
    if let (Method::Pmp(_), Some(trend)) = (method, kld_trend(&outcome.history)) {
        if cfg.lambda > 0.0 && !trend.decreased {
            log::warn!("KL term did not decrease: first {:.4e}, last {:.4e}", trend.initial, trend.last);
        }
    }
    let accuracy = outcome.test_accuracy.unwrap_or(f64::NAN);
    let row = ReportRow::new(cfg.rate, outcome.observed_pr, method.kind(), accuracy, cfg.seed, wall_time);
    Ok((row, outcome))
}

/// `run`: one PMP training with the `[train]` section.
///
/// Writes the metrics, a one-row report and a checkpoint into `out_dir`.
/// On divergence a diagnostic file is written instead of the checkpoint.
pub fn run(cfg: &ExperimentConfig, base_dir: &Path, out_dir: &Path) -> anyhow::Result<RunArtifacts> {
    let data = cfg.dataset(base_dir)?;
    let gcn = cfg.gcn_config(&data)?;
    if data.test.is_empty() {
        anyhow::bail!("dataset: no test sequences");
    }
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let target = SweepTarget::Law(cfg.train.target);
    log::info!("training {} epochs at rate {} on {} sequences", cfg.train.epochs, cfg.train.rate, data.train.len());
    let (row, outcome) = match train_one(&data, &gcn, &cfg.train, Method::Pmp(target), cfg.record_wall_time) {
        Ok(r) => r,
        Err(e @ CoreError::Diverged { epoch, .. }) => {
            let diag = Diagnostic { error: e.to_string(), epoch, train: &cfg.train };
            let path = out_dir.join(DIAGNOSTIC_FILE);
            std::fs::write(&path, serde_json::to_string_pretty(&diag)?)?;
            return Err(anyhow::Error::new(e).context(format!("diagnostic written to {}", path.display())));
        }
        Err(e) => return Err(e.into()),
    };
    accuracy_of(&outcome)?;
    let metrics = out_dir.join(METRICS_FILE);
    let report = out_dir.join(REPORT_FILE);
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    write_metrics(&metrics, &outcome.history)?;
    write_report(&report, std::slice::from_ref(&row))?;
    let ckpt = Checkpoint::new(outcome.model.clone(), Some(cfg.train.clone()), outcome.threshold, outcome.observed_pr);
    save_checkpoint(&checkpoint, &ckpt)?;
    Ok(RunArtifacts { row, outcome, metrics, report, checkpoint })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepJob {
    pub rate: f64,
    pub method: Method,
    pub seed: u64,
}

/// Jobs in report order: for each rate, every target then the baseline, per seed.
pub fn sweep_jobs(cfg: &ExperimentConfig) -> anyhow::Result<Vec<SweepJob>> {
    let sweep = cfg.sweep.as_ref().context("sweep: missing [sweep] section")?;
    let seeds = cfg.seeds();
    let mut jobs = Vec::new();
    for &rate in &sweep.rates {
        for target in &sweep.targets {
            jobs.extend(seeds.iter().map(|&seed| SweepJob { rate, method: Method::Pmp(*target), seed }));
        }
        if sweep.include_mp {
            jobs.extend(seeds.iter().map(|&seed| SweepJob { rate, method: Method::Mp, seed }));
        }
    }
    Ok(jobs)
}

fn job_config(base: &TrainConfig, job: &SweepJob) -> TrainConfig {
    match job.method {
        Method::Pmp(t) => t.apply(base, job.rate, job.seed),
        Method::Mp => TrainConfig { rate: job.rate, seed: job.seed, ..base.clone() },
    }
}

pub struct SweepOutcome {
    pub rows: Vec<ReportRow>,
    pub failures: Vec<FailureRow>,
}

/// Runs the given jobs in parallel. Every job is seeded on its own, so the
/// result does not depend on scheduling; rows come back in job order.
pub fn run_jobs(cfg: &ExperimentConfig, data: &Dataset, gcn: &GcnConfig, jobs: &[SweepJob]) -> SweepOutcome {
    let results: Vec<_> = jobs
        .par_iter()
        .map(|job| {
            let tc = job_config(&cfg.train, job);
            log::info!("sweep row: rate {} {} seed {}", job.rate, job.method.kind(), job.seed);
            train_one(data, gcn, &tc, job.method, cfg.record_wall_time)
                .map(|(row, _)| row)
                .map_err(|e| FailureRow {
                    schema: crate::report::CSV_SCHEMA_VERSION,
                    fixed_pr: job.rate,
                    target_kind: job.method.kind().into(),
                    seed: job.seed,
                    error: e.to_string(),
                })
        })
        .collect();
    let mut out = SweepOutcome { rows: Vec::new(), failures: Vec::new() };
    for r in results {
        match r {
            Ok(row) => out.rows.push(row),
            Err(f) => {
                log::error!("sweep row failed: rate {} {} seed {}: {}", f.fixed_pr, f.target_kind, f.seed, f.error);
                out.failures.push(f);
            }
        }
    }
    out
}

/// `sweep`: the cartesian product of rates, targets and seeds plus the
/// baseline rows. Writes the report, per-cell means and any failed rows.
pub fn sweep(cfg: &ExperimentConfig, base_dir: &Path, out_dir: &Path) -> anyhow::Result<SweepOutcome> {
    let jobs = sweep_jobs(cfg)?;
    let data = cfg.dataset(base_dir)?;
    let gcn = cfg.gcn_config(&data)?;
    if data.test.is_empty() {
        anyhow::bail!("dataset: no test sequences");
    }
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let out = run_jobs(cfg, &data, &gcn, &jobs);
    write_report(&out_dir.join(REPORT_FILE), &out.rows)?;
    write_csv(&out_dir.join(SUMMARY_FILE), &summarize(&out.rows))?;
    write_csv(&out_dir.join(FAILURES_FILE), &out.failures)?;
    Ok(out)
}
