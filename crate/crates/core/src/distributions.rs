//! Target laws for the latent-weight distribution.
//!
//! Each law exposes its density, CDF and quantile. A law may be truncated to
//! an interval (the histogram support), in which case all three are those of
//! the renormalized restriction, so that target and observed histograms live
//! on the same support.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::BinGrid;
use crate::math;

const SQRT_2: f64 = core::f64::consts::SQRT_2;
const FRAC_2_SQRT_PI: f64 = core::f64::consts::FRAC_2_SQRT_PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistributionKind {
    Uniform,
    Gaussian,
    Laplace,
}

/// Parameters of an untruncated law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Law {
    /// Density `1/(2T)` on `[−T, T]`.
    Uniform { half_width: f64 },
    Gaussian { mean: f64, std: f64 },
    /// Density `exp(−|w − loc|/scale) / (2·scale)`.
    Laplace { loc: f64, scale: f64 },
}

/// How the pruning threshold is read off the target law.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantileMode {
    /// `P(|ŵ − loc| ≤ a) = r`: the pruned fraction equals the rate.
    #[default]
    Magnitude,
    /// `a = |F⁻¹(r)|` on signed weights.
    Signed,
}

/// A target law `P`, optionally restricted to `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetDistribution {
    law: Law,
    support: Option<(f64, f64)>,
}

/// A probability vector over bin centers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteLaw {
    bins: Vec<f64>,
    probs: Vec<f64>,
}

impl DiscreteLaw {
    pub fn new(bins: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if bins.is_empty() || bins.len() != probs.len() {
            return Err(Error::Contract(format!("{} bins vs {} probabilities", bins.len(), probs.len())));
        }
        if bins.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Contract("bin centers must increase strictly".into()));
        }
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::Contract("probabilities must be finite and non-negative".into()));
        }
        let total = math::pairwise_sum(&probs);
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!("probabilities sum to {total}")));
        }
        Ok(Self { bins, probs })
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

/// Inverse error function on `(−1, 1)`.
///
/// A rational initial guess (Giles' single-precision approximation) is
/// polished by two Newton steps on `erf`.
pub fn inverse_erf(x: f64) -> Result<f64> {
    if !(x.abs() < 1.0) {
        return Err(Error::Domain(format!("inverse_erf needs |x| < 1, got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let w = -math::log((1.0 - x) * (1.0 + x));
    let mut y = if w < 5.0 {
        let w = w - 2.5;
        let mut p = 2.810_226_36e-08;
        p = 3.432_739_39e-07 + p * w;
        p = -3.523_387_7e-06 + p * w;
        p = -4.391_506_54e-06 + p * w;
        p = 0.000_218_580_87 + p * w;
        p = -0.001_253_725_03 + p * w;
        p = -0.004_177_681_64 + p * w;
        p = 0.246_640_727 + p * w;
        p = 1.501_409_41 + p * w;
        p * x
    } else {
        let w = math::sqrt(w) - 3.0;
        let mut p = -0.000_200_214_257;
        p = 0.000_100_950_558 + p * w;
        p = 0.001_349_343_22 + p * w;
        p = -0.003_673_428_44 + p * w;
        p = 0.005_739_507_73 + p * w;
        p = -0.007_622_461_3 + p * w;
        p = 0.009_438_870_47 + p * w;
        p = 1.001_674_06 + p * w;
        p = 2.832_976_82 + p * w;
        p * x
    };
    for _ in 0..2 {
        let err = math::erf(y) - x;
        y -= err / (FRAC_2_SQRT_PI * math::exp(-y * y));
    }
    Ok(y)
}

impl Law {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Law::Uniform { half_width } => half_width > 0.0 && half_width.is_finite(),
            Law::Gaussian { mean, std } => std > 0.0 && std.is_finite() && mean.is_finite(),
            Law::Laplace { loc, scale } => scale > 0.0 && scale.is_finite() && loc.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(format!("invalid law parameters {self:?}")))
        }
    }

    fn location(&self) -> f64 {
        match *self {
            Law::Uniform { .. } => 0.0,
            Law::Gaussian { mean, .. } => mean,
            Law::Laplace { loc, .. } => loc,
        }
    }

    fn pdf(&self, w: f64) -> f64 {
        match *self {
            Law::Uniform { half_width: t } => {
                if w.abs() <= t {
                    1.0 / (2.0 * t)
                } else {
                    0.0
                }
            }
            Law::Gaussian { mean, std } => {
                let z = (w - mean) / std;
                math::exp(-0.5 * z * z) / (std * math::sqrt(2.0 * core::f64::consts::PI))
            }
            Law::Laplace { loc, scale } => math::exp(-(w - loc).abs() / scale) / (2.0 * scale),
        }
    }

    fn cdf(&self, w: f64) -> f64 {
        match *self {
            Law::Uniform { half_width: t } => ((w + t) / (2.0 * t)).clamp(0.0, 1.0),
            Law::Gaussian { mean, std } => 0.5 * math::erfc(-(w - mean) / (std * SQRT_2)),
            Law::Laplace { loc, scale } => {
                if w < loc {
                    0.5 * math::exp((w - loc) / scale)
                } else {
                    1.0 - 0.5 * math::exp(-(w - loc) / scale)
                }
            }
        }
    }

    /// Closed-form quantiles for `p ∈ (0, 1)`.
    fn quantile(&self, p: f64) -> Result<f64> {
        Ok(match *self {
            Law::Uniform { half_width: t } => -t + 2.0 * p * t,
            Law::Gaussian { mean, std } => mean + std * SQRT_2 * inverse_erf(2.0 * p - 1.0)?,
            Law::Laplace { loc, scale } => {
                if p <= 0.5 {
                    loc + scale * math::log(2.0 * p)
                } else {
                    loc - scale * math::log(2.0 - 2.0 * p)
                }
            }
        })
    }
}

impl TargetDistribution {
    pub fn new(law: Law) -> Result<Self> {
        law.validate()?;
        Ok(Self { law, support: None })
    }

    pub fn uniform(half_width: f64) -> Result<Self> {
        Self::new(Law::Uniform { half_width })
    }

    pub fn gaussian(mean: f64, std: f64) -> Result<Self> {
        Self::new(Law::Gaussian { mean, std })
    }

    pub fn laplace(loc: f64, scale: f64) -> Result<Self> {
        Self::new(Law::Laplace { loc, scale })
    }

    /// Restricts the law to `[lo, hi]` and renormalizes.
    pub fn truncated(self, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Contract(format!("support [{lo}, {hi}] is empty or unbounded")));
        }
        let mass = self.law.cdf(hi) - self.law.cdf(lo);
        if !(mass > 0.0) {
            return Err(Error::Contract(format!("law {:?} has no mass on [{lo}, {hi}]", self.law)));
        }
        Ok(Self { law: self.law, support: Some((lo, hi)) })
    }

    pub fn law(&self) -> &Law {
        &self.law
    }

    pub fn kind(&self) -> DistributionKind {
        match self.law {
            Law::Uniform { .. } => DistributionKind::Uniform,
            Law::Gaussian { .. } => DistributionKind::Gaussian,
            Law::Laplace { .. } => DistributionKind::Laplace,
        }
    }

    pub fn location(&self) -> f64 {
        self.law.location()
    }

    /// Effective support; `None` means the whole real line (or `[−T, T]`
    /// for an untruncated uniform).
    pub fn support(&self) -> Option<(f64, f64)> {
        self.support
    }

    fn support_mass(&self) -> (f64, f64) {
        match self.support {
            None => (0.0, 1.0),
            Some((lo, hi)) => {
                let base = self.law.cdf(lo);
                (base, self.law.cdf(hi) - base)
            }
        }
    }

    /// True when the (possibly truncated) law is symmetric about its location.
    pub fn is_symmetric(&self) -> bool {
        match self.support {
            None => true,
            Some((lo, hi)) => {
                let loc = self.location();
                let scale = (hi - lo).abs().max(1.0);
                ((loc - lo) - (hi - loc)).abs() <= 1e-12 * scale
            }
        }
    }

    pub fn pdf(&self, w: f64) -> f64 {
        match self.support {
            None => self.law.pdf(w),
            Some((lo, hi)) if w < lo || w > hi => 0.0,
            Some(_) => self.law.pdf(w) / self.support_mass().1,
        }
    }

    pub fn cdf(&self, w: f64) -> f64 {
        match self.support {
            None => self.law.cdf(w),
            Some((lo, hi)) => {
                if w <= lo {
                    0.0
                } else if w >= hi {
                    1.0
                } else {
                    let (base, mass) = self.support_mass();
                    ((self.law.cdf(w) - base) / mass).clamp(0.0, 1.0)
                }
            }
        }
    }

    /// `a = F⁻¹(r)` on signed weights, `r ∈ (0, 1)`.
    pub fn quantile_signed(&self, r: f64) -> Result<f64> {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::Domain(format!("quantile rate must lie in (0, 1), got {r}")));
        }
        let (base, mass) = self.support_mass();
        let q = self.law.quantile(base + r * mass)?;
        Ok(match self.support {
            Some((lo, hi)) => q.clamp(lo, hi),
            None => q,
        })
    }

    /// Smallest `a ≥ 0` with `P(|ŵ − loc| ≤ a) = r`, `r ∈ [0, 1)`.
    pub fn quantile_magnitude(&self, r: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&r) {
            return Err(Error::Domain(format!("magnitude rate must lie in [0, 1), got {r}")));
        }
        if !self.is_symmetric() {
            return Err(Error::Contract("magnitude quantile needs a law symmetric about its location".into()));
        }
        if r == 0.0 {
            return Ok(0.0);
        }
        Ok((self.quantile_signed(0.5 * (1.0 + r))? - self.location()).max(0.0))
    }

    /// Pruning threshold for rate `r` under the chosen reading of the quantile.
    pub fn threshold(&self, r: f64, mode: QuantileMode) -> Result<f64> {
        match mode {
            QuantileMode::Magnitude => self.quantile_magnitude(r),
            QuantileMode::Signed if r == 0.0 => Ok(0.0),
            QuantileMode::Signed => Ok(self.quantile_signed(r)?.abs()),
        }
    }

    /// Bin probabilities from CDF differences over the grid's bin edges.
    pub fn discretize(&self, grid: &BinGrid) -> Result<DiscreteLaw> {
        let edges = grid.edges();
        let raw: Vec<f64> = edges.windows(2).map(|e| (self.cdf(e[1]) - self.cdf(e[0])).max(0.0)).collect();
        let total = math::pairwise_sum(&raw);
        if !(total > 0.0) {
            return Err(Error::Contract("target law puts no mass on the bin grid".into()));
        }
        DiscreteLaw::new(grid.centers().to_vec(), raw.iter().map(|p| p / total).collect())
    }
}
