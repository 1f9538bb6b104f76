use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use pmp::config::ExperimentConfig;
use pmp::curves::{dump_curves, CurveRequest};
use pmp::dataset_io::{default_class_names, load_dataset, load_sequences, write_sequences, DataFormat};
use pmp::experiment;
use pmp::load_checkpoint;
use pmp_core::train::evaluate;
use pmp_core::SynthSpec;

/// Probabilistic magnitude pruning of skeleton-action GCNs.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Root for relative output directories.
    #[arg(long, env = "PMP_OUTPUT_ROOT", default_value = "runs", global = true)]
    output_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one pruned model; writes metrics.csv, report.csv and checkpoint.json.
    Run(RunArgs),
    /// Train every (rate, target, seed) row plus magnitude-pruning baselines.
    Sweep(RunArgs),
    /// Write the gate curve, target bins and optionally a checkpoint's weight histogram.
    DumpCurves(CurveArgs),
    /// Dataset utilities.
    #[command(subcommand)]
    Data(DataCommand),
    /// Macro accuracy of a checkpoint's hard-exported model.
    Eval(EvalArgs),
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CurveArgs {
    config: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Also dump the checkpoint's latent-weight histogram (observed.csv).
    #[arg(long)]
    observed: bool,
    /// Gate threshold override.
    #[arg(long)]
    a: Option<f64>,
    /// Gate scale override.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum DataCommand {
    /// Generate the synthetic dataset.
    Synth {
        /// Destination file (.jsonl or .csv).
        out: PathBuf,
        #[arg(long)]
        format: Option<DataFormat>,
        #[arg(long, default_value_t = 14)]
        joints: usize,
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[arg(long, default_value_t = 60)]
        per_class: usize,
        #[arg(long, default_value_t = 64)]
        frames: usize,
        #[arg(long, default_value_t = 0.01)]
        noise_std: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        test_fraction: f64,
    },
    /// Parse a dataset file and print a summary.
    Validate {
        file: PathBuf,
        #[arg(long)]
        format: Option<DataFormat>,
        #[arg(long, default_value_t = 32)]
        chunks: usize,
    },
}

#[derive(Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    /// Experiment config whose dataset is evaluated.
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    config: Option<PathBuf>,
    /// Dataset file to evaluate instead.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    format: Option<DataFormat>,
    #[arg(long, default_value_t = 32)]
    chunks: usize,
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn out_dir(root: &Path, explicit: Option<&Path>, cfg: &ExperimentConfig, config_path: &Path) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    let rel = cfg.output_dir.clone().unwrap_or_else(|| {
        PathBuf::from(config_path.file_stem().map(|s| s.to_os_string()).unwrap_or_else(|| "run".into()))
    });
    root.join(rel)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let root = cli.output_root;
    match cli.command {
        Command::Run(a) => {
            let cfg = ExperimentConfig::load(&a.config)?;
            let dir = out_dir(&root, a.out.as_deref(), &cfg, &a.config);
            let art = experiment::run(&cfg, &config_dir(&a.config), &dir)?;
            let r = &art.row;
            println!(
                "fixed_pr {} observed_pr {:.4} gap {:.4} accuracy {:.4}  -> {}",
                r.fixed_pr,
                r.observed_pr,
                r.gap,
                r.accuracy,
                dir.display()
            );
        }
        Command::Sweep(a) => {
            let cfg = ExperimentConfig::load(&a.config)?;
            let dir = out_dir(&root, a.out.as_deref(), &cfg, &a.config);
            let out = experiment::sweep(&cfg, &config_dir(&a.config), &dir)?;
            println!("{} rows, {} failures -> {}", out.rows.len(), out.failures.len(), dir.display());
            if !out.failures.is_empty() {
                anyhow::bail!("{} sweep rows failed; see {}", out.failures.len(), experiment::FAILURES_FILE);
            }
        }
        Command::DumpCurves(a) => {
            let cfg = ExperimentConfig::load(&a.config)?;
            let dir = out_dir(&root, a.out.as_deref(), &cfg, &a.config);
            let req = CurveRequest { checkpoint: a.checkpoint.as_deref(), observed: a.observed, a: a.a, sigma: a.sigma };
            for p in dump_curves(&cfg.train, &req, &dir)? {
                println!("{}", p.display());
            }
        }
        Command::Data(DataCommand::Synth {
            out,
            format,
            joints,
            classes,
            per_class,
            frames,
            noise_std,
            seed,
            test_fraction,
        }) => {
            let spec = SynthSpec { joints, classes, per_class, frames, noise_std, seed, test_fraction, ..SynthSpec::default() };
            let seqs = spec.sequences()?;
            write_sequences(&out, DataFormat::resolve(format, &out)?, &seqs)?;
            println!("{} sequences -> {}", seqs.len(), out.display());
        }
        Command::Data(DataCommand::Validate { file, format, chunks }) => {
            let format = DataFormat::resolve(format, &file)?;
            let seqs = load_sequences(&file, format)?;
            let data = pmp_core::Dataset::from_sequences(&seqs, chunks, default_class_names(&seqs))?;
            println!(
                "{}: {} sequences ({} train, {} test), {} joints, {} classes",
                file.display(),
                seqs.len(),
                data.train.len(),
                data.test.len(),
                data.nodes(),
                data.classes()
            );
        }
        Command::Eval(a) => {
            let ckpt = load_checkpoint(&a.checkpoint)?;
            let data = match (&a.config, &a.data) {
                (Some(c), _) => ExperimentConfig::load(c)?.dataset(&config_dir(c))?,
                (None, Some(d)) => load_dataset(d, DataFormat::resolve(a.format, d)?, a.chunks)?,
                (None, None) => unreachable!("clap requires one source"),
            };
            let samples = if data.test.is_empty() { &data.train } else { &data.test };
            let exported = ckpt.model.hard_export();
            let ev = evaluate(&exported, samples).context("evaluating checkpoint")?;
            for c in &ev.excluded {
                log::warn!("class {c} has no evaluation samples and is left out of the average");
            }
            println!("accuracy {:.4} over {} samples", ev.accuracy, samples.len());
            for (c, acc) in ev.per_class.iter().enumerate() {
                if let Some(acc) = acc {
                    println!("  class {c}: {acc:.4}");
                }
            }
        }
    }
    Ok(())
}
