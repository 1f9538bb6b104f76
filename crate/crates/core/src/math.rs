//! Floating-point helpers for a `no_std` build.

pub use libm::{erf, erfc, exp, fabs as abs, floor, log, round, sqrt};

/// Pairwise (cascade) summation; deterministic and well conditioned.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}
