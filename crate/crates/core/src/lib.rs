//! Probabilistic magnitude pruning for graph convolutional networks.
//!
//! Latent weights `ŵ` are used through a smooth band-stop gate,
//! `w = ŵ · ψ(ŵ)`, while a KL term pulls a differentiable histogram of the
//! latent weights toward an a-priori target law. The quantile of that law
//! at the pruning rate fixes the gate threshold, so a chosen budget is met
//! within a single training run.
//!
//! The crate is `no_std` and needs only `alloc`; file formats, the
//! experiment runner and the CLI live in the companion `pmp` crate.

#![no_std]
// `!(x > 0.0)` is used on purpose so that NaN fails range checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod autodiff;
pub mod bandstop;
pub mod data;
pub mod distributions;
pub mod error;
pub mod gcn;
pub mod gradcheck;
pub mod histogram;
pub mod math;
pub mod tensor;
pub mod train;

pub use autodiff::{CompGraph, ElementwiseOp, Gradients, Var};
pub use bandstop::{BandStopConfig, LatentLayer, SigmaSchedule};
pub use data::{Dataset, GraphSample, SkeletonSequence, SynthSpec};
pub use distributions::{DiscreteLaw, DistributionKind, QuantileMode, TargetDistribution};
pub use error::{Error, Result};
pub use gcn::{GcnConfig, GcnModel};
pub use histogram::BinGrid;
pub use tensor::Tensor;
pub use train::{TrainConfig, TrainOutcome};
