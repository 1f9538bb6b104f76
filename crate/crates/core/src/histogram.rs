//! Differentiable soft histogram of latent weights and the discrete KL
//! budget loss `D_KL(P || Q)`.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{CompGraph, Var};
use crate::distributions::DiscreteLaw;
use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Floor applied to `Q` inside the logarithm.
pub const KLD_EPSILON: f64 = 1e-8;

/// Bin centers over a support `Ω = [lo, hi]` and the kernel width of each bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    omega: (f64, f64),
    centers: Vec<f64>,
    widths: Vec<f64>,
}

impl BinGrid {
    /// `k` equally spaced bins over `[lo, hi]`, centers at bin midpoints and
    /// widths `β = (q_{k+1} − q_k) / 2`.
    pub fn uniform(lo: f64, hi: f64, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::Contract(format!("a bin grid needs at least 2 bins, got {k}")));
        }
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Contract(format!("degenerate support [{lo}, {hi}]")));
        }
        let step = (hi - lo) / k as f64;
        let centers: Vec<f64> = (0..k).map(|i| lo + (i as f64 + 0.5) * step).collect();
        Self::from_centers(lo, hi, centers)
    }

    /// A grid from explicit centers; the last bin reuses the preceding gap.
    pub fn from_centers(lo: f64, hi: f64, centers: Vec<f64>) -> Result<Self> {
        if centers.len() < 2 {
            return Err(Error::Contract("a bin grid needs at least 2 bins".into()));
        }
        if centers.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Contract("bin centers must increase strictly".into()));
        }
        if centers[0] < lo || centers[centers.len() - 1] > hi {
            return Err(Error::Contract(format!("bin centers leave the support [{lo}, {hi}]")));
        }
        let mut widths: Vec<f64> = centers.windows(2).map(|w| 0.5 * (w[1] - w[0])).collect();
        widths.push(widths[widths.len() - 1]);
        Ok(Self { omega: (lo, hi), centers, widths })
    }

    pub fn omega(&self) -> (f64, f64) {
        self.omega
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Bin edges: the support bounds and the midpoints between centers.
    pub fn edges(&self) -> Vec<f64> {
        let mut e = Vec::with_capacity(self.len() + 1);
        e.push(self.omega.0);
        e.extend(self.centers.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        e.push(self.omega.1);
        e
    }

    /// Same centers with every kernel width multiplied by `factor`.
    pub fn with_width_scale(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) {
            return Err(Error::Contract(format!("width scale must be positive, got {factor}")));
        }
        let mut g = self.clone();
        for w in &mut g.widths {
            *w *= factor;
        }
        Ok(g)
    }

    /// Index of the bin whose edges contain `w`; values outside `Ω` go to the
    /// outermost bins.
    pub fn bin_of(&self, w: f64) -> usize {
        let edges = self.edges();
        let inner = &edges[1..edges.len() - 1];
        inner.partition_point(|&e| e <= w)
    }
}

/// `Q` as a normalized node of `g`: Gaussian kernels of every entry of
/// `latents` summed per bin, then divided by the total mass.
pub fn soft_histogram(g: &mut CompGraph, latents: &[Var], grid: &BinGrid) -> Result<Var> {
    if latents.is_empty() {
        return Err(Error::Contract("soft histogram over no layers".into()));
    }
    let mass = g.kernel_histogram(latents, grid.centers(), grid.widths())?;
    let total = g.sum(mass);
    if !(g.value(total).item() > 0.0) {
        return Err(Error::Contract("all latent weights lie far outside the bin grid".into()));
    }
    let inv = g.recip(total)?;
    g.mul(mass, inv)
}

/// Value-only soft histogram, for reporting.
pub fn soft_histogram_values(latents: &[&Tensor], grid: &BinGrid) -> Result<Vec<f64>> {
    let mut g = CompGraph::new();
    let vars: Vec<Var> = latents.iter().map(|t| g.constant((*t).clone())).collect();
    let q = soft_histogram(&mut g, &vars, grid)?;
    Ok(g.value(q).data().to_vec())
}

/// Normalized hard histogram (bin counts over the grid's edges).
pub fn hard_histogram(values: &[f64], grid: &BinGrid) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Contract("hard histogram of no values".into()));
    }
    let mut counts = alloc::vec![0.0; grid.len()];
    for &w in values {
        counts[grid.bin_of(w)] += 1.0;
    }
    let n = values.len() as f64;
    Ok(counts.into_iter().map(|c| c / n).collect())
}

/// `Σ_k p_k (ln p_k − ln max(q_k, ε))` in nats, as a node of `g`.
pub fn kld(g: &mut CompGraph, p: &DiscreteLaw, q: Var) -> Result<Var> {
    let qv = g.value(q);
    if qv.numel() != p.len() {
        return Err(Error::Contract(format!("P has {} bins, Q has {}", p.len(), qv.numel())));
    }
    let entropy: f64 = math::pairwise_sum(
        &p.probs().iter().map(|&pk| if pk > 0.0 { pk * math::log(pk) } else { 0.0 }).collect::<Vec<_>>(),
    );
    let floored = g.clamp_min(q, KLD_EPSILON);
    let logq = g.log(floored)?;
    let pt = g.constant(Tensor::vector(p.probs().to_vec()));
    let cross = g.mul(pt, logq)?;
    let cross = g.sum(cross);
    let neg_entropy = g.scalar(entropy);
    g.sub(neg_entropy, cross)
}

/// [`kld`] checking that `P` was built on `grid`.
pub fn kld_on_grid(g: &mut CompGraph, p: &DiscreteLaw, q: Var, grid: &BinGrid) -> Result<Var> {
    let same = p.bins().len() == grid.len()
        && p.bins().iter().zip(grid.centers()).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + b.abs()));
    if !same {
        return Err(Error::Contract("P and Q are defined on different bin grids".into()));
    }
    kld(g, p, q)
}

/// Value-only KL divergence between two probability vectors.
pub fn kld_values(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Contract(format!("P has {} bins, Q has {}", p.len(), q.len())));
    }
    let terms: Vec<f64> = p
        .iter()
        .zip(q)
        .map(|(&pk, &qk)| if pk > 0.0 { pk * (math::log(pk) - math::log(qk.max(KLD_EPSILON))) } else { 0.0 })
        .collect();
    Ok(math::pairwise_sum(&terms))
}
