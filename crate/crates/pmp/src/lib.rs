//! File formats, experiment runner and CLI support for probabilistic
//! magnitude pruning. The numerical work lives in `pmp_core`.

pub mod checkpoint;
pub mod config;
pub mod curves;
pub mod dataset_io;
pub mod error;
pub mod experiment;
pub mod report;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::ExperimentConfig;
pub use dataset_io::{load_dataset, load_sequences, write_sequences, DataFormat};
pub use error::FormatError;
pub use report::{read_report, write_report, ReportRow};
