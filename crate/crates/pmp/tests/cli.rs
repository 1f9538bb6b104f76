use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pmp::curves::{BinRow, PsiRow};
use pmp::report::{read_csv, read_report, write_report, Columns, FailureRow, MetricsRow, ReportRow, SummaryRow};

const TINY: &str = r#"
record_wall_time = false

[dataset.synth]
joints = 5
classes = 2
per_class = 6
frames = 8
noise_std = 0.01
seed = 3
chunks = 4

[model]
embed_dim = 4
heads = 2
filters = 4
dense_dim = 6

[train]
epochs = 3
retrain_epochs = 2
batch_size = 4
rate = 0.5
"#;

fn pmp(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmp")).args(args).env("PMP_OUTPUT_ROOT", root).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_all_artifacts_under_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let o = pmp(&["run", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("tiny");
    for f in ["metrics.csv", "report.csv", "checkpoint.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let metrics: Vec<MetricsRow> = read_csv(&out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.len(), 3);
    let rows = read_report(&out.join("report.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].fixed_pr, 0.5);
    assert_eq!(rows[0].gap, (rows[0].observed_pr - 0.5).abs());
    assert_eq!(rows[0].wall_time, 0.0);

    let e = pmp(&["eval", out.join("checkpoint.json").to_str().unwrap(), "--config", cfg.to_str().unwrap()], dir.path());
    assert!(e.status.success(), "{}", stderr(&e));
    assert!(String::from_utf8_lossy(&e.stdout).starts_with("accuracy "));
}

#[test]
fn invalid_rate_fails_with_field_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", &TINY.replace("rate = 0.5", "rate = 1.0"));
    let o = pmp(&["run", cfg.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("train.rate") && err.contains("0 <= r < 1"), "{err}");
    assert!(!dir.path().join("bad").exists(), "no work before validation");
}

#[test]
fn unknown_key_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "typo.toml", &TINY.replace("batch_size", "batchsize"));
    let o = pmp(&["run", cfg.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("batchsize"), "{}", stderr(&o));
}

#[test]
fn sweep_counts_rows_and_summarizes() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{TINY}\n[sweep]\nrates = [0.55, 0.98]\ntargets = [\"gaussian\", \"laplace\"]\n");
    let cfg = write_config(dir.path(), "sw.toml", &text);
    let out = dir.path().join("out");
    let o = pmp(&["sweep", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_report(&out.join("report.csv")).unwrap();
    let kinds: Vec<(f64, &str)> = rows.iter().map(|r| (r.fixed_pr, r.target_kind.as_str())).collect();
    assert_eq!(
        kinds,
        [(0.55, "gaussian"), (0.55, "laplace"), (0.55, "mp"), (0.98, "gaussian"), (0.98, "laplace"), (0.98, "mp")]
    );
    for r in &rows {
        assert_eq!(r.gap, (r.observed_pr - r.fixed_pr).abs());
    }
    let summary: Vec<SummaryRow> = read_csv(&out.join("summary.csv")).unwrap();
    assert_eq!(summary.len(), 6);
    let failures: Vec<FailureRow> = read_csv(&out.join("failures.csv")).unwrap();
    assert!(failures.is_empty());

    // rows are independent of execution order: rerun one row on its own
    let single = format!("{TINY}\n[sweep]\nrates = [0.98]\ntargets = [\"laplace\"]\ninclude_mp = false\n");
    let cfg = write_config(dir.path(), "one.toml", &single);
    let out1 = dir.path().join("out1");
    assert!(pmp(&["sweep", cfg.to_str().unwrap(), "--out", out1.to_str().unwrap()], dir.path()).status.success());
    assert_eq!(read_report(&out1.join("report.csv")).unwrap(), vec![rows[4].clone()]);
}

#[test]
fn empty_rates_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "e.toml", &format!("{TINY}\n[sweep]\nrates = []\ntargets = [\"gaussian\"]\n"));
    let o = pmp(&["sweep", cfg.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("sweep.rates"));
}

#[test]
fn dump_curves_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", TINY);
    let out = dir.path().join("curves");
    let o = pmp(&["dump-curves", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let psi: Vec<PsiRow> = read_csv(&out.join("psi.csv")).unwrap();
    assert_eq!(psi.len(), 400);
    let target: Vec<BinRow> = read_csv(&out.join("target.csv")).unwrap();
    assert_eq!(target.len(), 100);
    assert!((target.iter().map(|r| r.mass).sum::<f64>() - 1.0).abs() < 1e-12);

    // observed histogram needs a checkpoint
    let o = pmp(&["dump-curves", cfg.to_str().unwrap(), "--observed", "--out", out.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("no checkpoint"), "{}", stderr(&o));
    let o = pmp(
        &["dump-curves", cfg.to_str().unwrap(), "--observed", "--checkpoint", "/nonexistent/ck.json"],
        dir.path(),
    );
    assert!(!o.status.success());
}

#[test]
fn half_point_on_gate_curve() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY.replace("rate = 0.5", "rate = 0.5\nomega = [-2.0, 2.0]");
    let cfg = write_config(dir.path(), "h.toml", &text);
    let out = dir.path().join("h");
    let o = pmp(
        &["dump-curves", cfg.to_str().unwrap(), "--a", "1", "--sigma", "1", "--out", out.to_str().unwrap()],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let psi: Vec<PsiRow> = read_csv(&out.join("psi.csv")).unwrap();
    let i = psi.iter().position(|r| r.w >= 1.0).unwrap();
    let (l, r) = (&psi[i - 1], &psi[i]);
    let at_one = l.psi + (r.psi - l.psi) * (1.0 - l.w) / (r.w - l.w);
    assert!((at_one - 0.5).abs() < 1e-4, "{at_one}");
}

#[test]
fn data_synth_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    for ext in ["jsonl", "csv"] {
        let file = dir.path().join(format!("d.{ext}"));
        let f = file.to_str().unwrap();
        let o = pmp(&["data", "synth", f, "--joints", "5", "--classes", "3", "--per-class", "4", "--frames", "9"], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
        let o = pmp(&["data", "validate", f, "--chunks", "4"], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
        let text = String::from_utf8_lossy(&o.stdout);
        assert!(text.contains("12 sequences (6 train, 6 test), 5 joints, 3 classes"), "{text}");
    }
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let o = pmp(&["data", "validate", empty.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("no sequences"));
}

#[test]
fn report_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    let rows = vec![
        ReportRow::new(0.98, 0.9886, "laplace", 0.6417, 0, 12.345678901234567),
        ReportRow::new(0.55, 0.1 + 0.2, "gaussian", 1.0 / 3.0, 7, 0.0),
        ReportRow::new(0.0, 0.0, "mp", f64::MIN_POSITIVE, u64::MAX, 1e-300),
    ];
    write_report(&path, &rows).unwrap();
    assert_eq!(read_report(&path).unwrap(), rows);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), ReportRow::COLUMNS.join(","));

    write_report(&path, &[]).unwrap();
    assert!(read_report(&path).unwrap().is_empty());
    assert_eq!(std::fs::read_to_string(&path).unwrap().trim(), ReportRow::COLUMNS.join(","));
}
