//! Skeleton-sequence files.
//!
//! One record per sequence, in JSON Lines or CSV. Every record carries:
//!
//! | field        | type                  | meaning                                             |
//! |--------------|-----------------------|-----------------------------------------------------|
//! | `version`    | integer               | record schema version, currently 1                  |
//! | `label`      | integer               | class index, `0..classes`                           |
//! | `joints`     | integer               | joint count `n`                                     |
//! | `frames`     | integer               | frame count `T ≥ 1`                                 |
//! | `split`      | `train` \| `test`     | protocol side (optional, default `train`)           |
//! | `edges`      | list of joint pairs   | skeleton connectivity                               |
//! | `coords`     | `3·n·T` numbers       | joint-major, then frame, then x, y, z               |
//! | `timestamps` | `T` numbers           | per-frame times (optional, default `0, 1, …, T−1`)  |
//!
//! In JSON Lines, `edges` is `[[0, 1], [1, 2]]` and the number lists are
//! arrays. In CSV, `edges` is written `0-1 1-2` and the number lists are
//! space-separated; an empty `timestamps` cell means the default.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use pmp_core::data::{Frame, Split};
use pmp_core::{Dataset, SkeletonSequence};
use serde::{Deserialize, Serialize};

use crate::error::{FormatError, Result};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Jsonl,
    Csv,
}

impl DataFormat {
    /// Format implied by a `.jsonl` / `.csv` extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "jsonl" => Some(Self::Jsonl),
            "csv" => Some(Self::Csv),
            _ => None,
        }
    }

    pub fn resolve(explicit: Option<Self>, path: &Path) -> Result<Self> {
        explicit
            .or_else(|| Self::from_path(path))
            .ok_or_else(|| FormatError::schema(path, "cannot infer the data format; use a .jsonl or .csv extension"))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRecord {
    version: u32,
    label: usize,
    joints: usize,
    frames: usize,
    #[serde(default)]
    split: Split,
    edges: Vec<(usize, usize)>,
    coords: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    timestamps: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CsvRecord {
    version: u32,
    label: usize,
    joints: usize,
    frames: usize,
    split: Split,
    edges: String,
    coords: String,
    timestamps: String,
}

impl JsonRecord {
    fn from_sequence(seq: &SkeletonSequence, split: Split) -> std::result::Result<Self, String> {
        let frames = seq.frame_count();
        let mut coords = Vec::with_capacity(3 * frames * seq.joint_count());
        for traj in &seq.joints {
            for f in traj {
                coords.extend([f.x, f.y, f.z]);
            }
        }
        let times: Vec<f64> = seq.joints.first().map(|t| t.iter().map(|f| f.t).collect()).unwrap_or_default();
        if seq.joints.iter().any(|traj| traj.iter().map(|f| f.t).ne(times.iter().copied())) {
            return Err("joints of one sequence must share frame timestamps".into());
        }
        let default_times = times.iter().enumerate().all(|(i, &t)| t == i as f64);
        Ok(Self {
            version: DATASET_SCHEMA_VERSION,
            label: seq.label,
            joints: seq.joint_count(),
            frames,
            split,
            edges: seq.edges.clone(),
            coords,
            timestamps: (!default_times).then_some(times),
        })
    }

    fn into_sequence(self) -> std::result::Result<(SkeletonSequence, Split), String> {
        if self.version != DATASET_SCHEMA_VERSION {
            return Err(format!("unsupported record version {} (expected {DATASET_SCHEMA_VERSION})", self.version));
        }
        if self.joints == 0 || self.frames == 0 {
            return Err("joints and frames must be positive".into());
        }
        let expected = 3 * self.joints * self.frames;
        if self.coords.len() != expected {
            return Err(format!(
                "coords has {} values, expected 3 x {} joints x {} frames = {expected}",
                self.coords.len(),
                self.joints,
                self.frames
            ));
        }
        let times = match self.timestamps {
            Some(t) if t.len() != self.frames => {
                return Err(format!("timestamps has {} values for {} frames", t.len(), self.frames));
            }
            Some(t) => t,
            None => (0..self.frames).map(|i| i as f64).collect(),
        };
        let joints = self
            .coords
            .chunks(3 * self.frames)
            .map(|traj| traj.chunks(3).zip(&times).map(|(p, &t)| Frame { t, x: p[0], y: p[1], z: p[2] }).collect())
            .collect();
        let seq = SkeletonSequence::new(joints, self.edges, self.label).map_err(|e| e.to_string())?;
        Ok((seq, self.split))
    }
}

fn join_numbers(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn parse_numbers(field: &str, cell: &str) -> std::result::Result<Vec<f64>, String> {
    cell.split_whitespace().map(|t| t.parse::<f64>().map_err(|e| format!("{field}: '{t}': {e}"))).collect()
}

fn parse_edges(cell: &str) -> std::result::Result<Vec<(usize, usize)>, String> {
    cell.split_whitespace()
        .map(|pair| {
            let (a, b) = pair.split_once('-').ok_or_else(|| format!("edges: '{pair}' is not of the form i-j"))?;
            let a = a.parse().map_err(|e| format!("edges: '{pair}': {e}"))?;
            let b = b.parse().map_err(|e| format!("edges: '{pair}': {e}"))?;
            Ok((a, b))
        })
        .collect()
}

impl CsvRecord {
    fn from_json(r: JsonRecord) -> Self {
        Self {
            version: r.version,
            label: r.label,
            joints: r.joints,
            frames: r.frames,
            split: r.split,
            edges: r.edges.iter().map(|(a, b)| format!("{a}-{b}")).collect::<Vec<_>>().join(" "),
            coords: join_numbers(&r.coords),
            timestamps: r.timestamps.as_deref().map(join_numbers).unwrap_or_default(),
        }
    }

    fn into_json(self) -> std::result::Result<JsonRecord, String> {
        let timestamps = if self.timestamps.trim().is_empty() {
            None
        } else {
            Some(parse_numbers("timestamps", &self.timestamps)?)
        };
        Ok(JsonRecord {
            version: self.version,
            label: self.label,
            joints: self.joints,
            frames: self.frames,
            split: self.split,
            edges: parse_edges(&self.edges)?,
            coords: parse_numbers("coords", &self.coords)?,
            timestamps,
        })
    }
}

/// Reads every sequence of a file, checking that all share one joint count.
pub fn load_sequences(path: &Path, format: DataFormat) -> Result<Vec<(SkeletonSequence, Split)>> {
    let file = File::open(path).map_err(|e| FormatError::io(path, e))?;
    let mut out: Vec<(SkeletonSequence, Split, u64)> = Vec::new();
    match format {
        DataFormat::Jsonl => {
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line_no = i as u64 + 1;
                let line = line.map_err(|e| FormatError::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: JsonRecord =
                    serde_json::from_str(&line).map_err(|e| FormatError::parse(path, line_no, e.to_string()))?;
                let (seq, split) = record.into_sequence().map_err(|m| FormatError::parse(path, line_no, m))?;
                out.push((seq, split, line_no));
            }
        }
        DataFormat::Csv => {
            let mut reader = csv::Reader::from_reader(file);
            let headers = reader.headers().map_err(|e| FormatError::parse(path, 1, e.to_string()))?.clone();
            for row in reader.records() {
                let row = row.map_err(|e| {
                    let line = e.position().map_or(0, |p| p.line());
                    FormatError::parse(path, line, e.to_string())
                })?;
                let line_no = row.position().map_or(0, |p| p.line());
                let record: CsvRecord =
                    row.deserialize(Some(&headers)).map_err(|e| FormatError::parse(path, line_no, e.to_string()))?;
                let (seq, split) = record
                    .into_json()
                    .and_then(JsonRecord::into_sequence)
                    .map_err(|m| FormatError::parse(path, line_no, m))?;
                out.push((seq, split, line_no));
            }
        }
    }
    let Some((first, _, _)) = out.first() else {
        return Err(FormatError::schema(path, "no sequences"));
    };
    let n = first.joint_count();
    if let Some((seq, _, line)) = out.iter().find(|(s, _, _)| s.joint_count() != n) {
        return Err(FormatError::schema(
            path,
            format!("line {line}: sequence has {} joints, earlier sequences have {n}", seq.joint_count()),
        ));
    }
    Ok(out.into_iter().map(|(s, split, _)| (s, split)).collect())
}

/// Class names `class0, class1, …` up to the largest label present.
pub fn default_class_names(seqs: &[(SkeletonSequence, Split)]) -> Vec<String> {
    let classes = seqs.iter().map(|(s, _)| s.label + 1).max().unwrap_or(0);
    (0..classes).map(|c| format!("class{c}")).collect()
}

pub fn load_dataset(path: &Path, format: DataFormat, chunks: usize) -> Result<Dataset> {
    let seqs = load_sequences(path, format)?;
    let names = default_class_names(&seqs);
    Ok(Dataset::from_sequences(&seqs, chunks, names)?)
}

pub fn write_sequences(path: &Path, format: DataFormat, seqs: &[(SkeletonSequence, Split)]) -> Result<()> {
    let file = File::create(path).map_err(|e| FormatError::io(path, e))?;
    let records = seqs
        .iter()
        .enumerate()
        .map(|(i, (s, split))| {
            JsonRecord::from_sequence(s, *split).map_err(|m| FormatError::schema(path, format!("sequence {i}: {m}")))
        })
        .collect::<Result<Vec<_>>>()?;
    match format {
        DataFormat::Jsonl => {
            let mut w = BufWriter::new(file);
            for r in &records {
                serde_json::to_writer(&mut w, r).map_err(|e| FormatError::io(path, e.into()))?;
                w.write_all(b"\n").map_err(|e| FormatError::io(path, e))?;
            }
            w.flush().map_err(|e| FormatError::io(path, e))?;
        }
        DataFormat::Csv => {
            let mut w = csv::Writer::from_writer(file);
            for r in records {
                w.serialize(CsvRecord::from_json(r)).map_err(|e| FormatError::io(path, e.into()))?;
            }
            w.flush().map_err(|e| FormatError::io(path, e))?;
        }
    }
    Ok(())
}
