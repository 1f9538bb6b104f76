//! Band-stop weight reparametrization `w = ŵ · ψ_{a,σ}(ŵ)`.
//!
//! `ψ_{a,σ}(ŵ) = 1 / (1 + σ exp(a² − ŵ²))` is a smooth, symmetric gate in
//! `(0, 1)` that vanishes for `|ŵ| ≪ a` and tends to one for `|ŵ| ≫ a`. It
//! is the only form of the pruning mask that exists during training; the
//! binary mask is produced by [`LatentLayer::hard_export`].

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{band_stop_value, CompGraph, Var, GATE_EXPONENT_CLAMP};
use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandStopConfig {
    a: f64,
    sigma: f64,
}

impl Default for BandStopConfig {
    fn default() -> Self {
        Self { a: 0.0, sigma: 1.0 }
    }
}

impl BandStopConfig {
    pub fn new(a: f64, sigma: f64) -> Result<Self> {
        if !(a >= 0.0) || !a.is_finite() {
            return Err(Error::Contract(format!("band-stop threshold must be finite and >= 0, got {a}")));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Contract(format!("band-stop scale must be finite and > 0, got {sigma}")));
        }
        Ok(Self { a, sigma })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn with_sigma(self, sigma: f64) -> Result<Self> {
        Self::new(self.a, sigma)
    }

    /// `|ŵ|` at which `ψ = 1/2`, i.e. `√(a² + ln σ)` (zero when the radicand
    /// is negative, where `ψ > 1/2` everywhere).
    pub fn half_transition(&self) -> f64 {
        math::sqrt((self.a * self.a + math::log(self.sigma)).max(0.0))
    }
}

/// `ψ_{a,σ}(ŵ)`.
pub fn band_stop(w_hat: f64, cfg: &BandStopConfig) -> f64 {
    band_stop_value(w_hat, cfg.a, cfg.sigma)
}

/// `1 − ψ_{a,σ}(ŵ)`, computed without cancellation so it stays positive
/// where `ψ` itself rounds to one.
pub fn band_stop_complement(w_hat: f64, cfg: &BandStopConfig) -> f64 {
    let e = (cfg.a * cfg.a - w_hat * w_hat).clamp(-GATE_EXPONENT_CLAMP, GATE_EXPONENT_CLAMP);
    let t = cfg.sigma * math::exp(e);
    t / (1.0 + t)
}

/// Schedule for the gate scale `σ` over epochs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SigmaSchedule {
    /// `σ = 1` throughout, so the gate's half point sits exactly at `a`.
    #[default]
    Constant,
    /// `σ(t) = σ₀ · ρᵗ`. The half point drifts as `√(a² + ln σ(t))`.
    Geometric { sigma0: f64, rho: f64 },
}

impl SigmaSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SigmaSchedule::Constant => Ok(()),
            SigmaSchedule::Geometric { sigma0, rho } if sigma0 > 0.0 && rho > 0.0 => Ok(()),
            s => Err(Error::Contract(format!("invalid sigma schedule {s:?}"))),
        }
    }

    pub fn sigma_at(&self, epoch: usize) -> f64 {
        match *self {
            SigmaSchedule::Constant => 1.0,
            SigmaSchedule::Geometric { sigma0, rho } => sigma0 * libm::pow(rho, epoch as f64),
        }
    }
}

/// A latent weight tensor carrying the gate configuration it is used with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentLayer {
    pub latent: Tensor,
    pub config: BandStopConfig,
}

impl LatentLayer {
    pub fn new(latent: Tensor, config: BandStopConfig) -> Result<Self> {
        latent.check_finite()?;
        Ok(Self { latent, config })
    }

    /// `ŵ · ψ(ŵ)` entrywise.
    pub fn effective_weights(&self) -> Tensor {
        self.latent.map(|w| w * band_stop(w, &self.config))
    }

    /// Entries with `|ŵ| ≤ a` become exactly zero; the rest keep `ŵ · ψ(ŵ)`.
    pub fn hard_export(&self) -> Tensor {
        let a = self.config.a;
        self.latent.map(|w| if w.abs() <= a { 0.0 } else { w * band_stop(w, &self.config) })
    }

    /// Number of entries with `|ŵ| ≤ a`.
    pub fn pruned_count(&self) -> usize {
        let a = self.config.a;
        self.latent.data().iter().filter(|w| w.abs() <= a).count()
    }

    pub fn numel(&self) -> usize {
        self.latent.numel()
    }
}

/// `ŵ ⊙ ψ(ŵ)` as a graph node; gradients reach `ŵ` through both factors.
pub fn effective_weights_node(g: &mut CompGraph, latent: Var, cfg: &BandStopConfig) -> Result<Var> {
    let gate = g.band_stop(latent, cfg.a, cfg.sigma);
    g.mul(latent, gate)
}

/// Fraction of entries over all layers with `|ŵ| ≤ a`.
pub fn observed_pruning_rate(layers: &[&LatentLayer]) -> Result<f64> {
    let total: usize = layers.iter().map(|l| l.numel()).sum();
    if total == 0 {
        return Err(Error::Contract("observed pruning rate of an empty model".into()));
    }
    let pruned: usize = layers.iter().map(|l| l.pruned_count()).sum();
    Ok(pruned as f64 / total as f64)
}

/// `(ŵ, ψ(ŵ), ŵ·ψ(ŵ))` at `points` evenly spaced values over `[lo, hi]`.
pub fn gate_curve(cfg: &BandStopConfig, lo: f64, hi: f64, points: usize) -> Vec<(f64, f64, f64)> {
    let steps = points.max(2) - 1;
    (0..=steps)
        .map(|i| {
            let w = lo + (hi - lo) * i as f64 / steps as f64;
            let psi = band_stop(w, cfg);
            (w, psi, w * psi)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use alloc::vec;

    fn cfg(a: f64, sigma: f64) -> BandStopConfig {
        BandStopConfig::new(a, sigma).unwrap()
    }

    #[test]
    fn gate_values() {
        assert_eq!(band_stop(1.0, &cfg(1.0, 1.0)), 0.5);
        let expected = 1.0 / (1.0 + core::f64::consts::E);
        assert!((band_stop(0.0, &cfg(1.0, 1.0)) - expected).abs() < 1e-15);
        assert!((expected - 0.268_941_421_369_995_1).abs() < 1e-12);
        assert!(1.0 - band_stop(10.0, &cfg(1.0, 1.0)) <= 1e-40);
    }

    #[test]
    fn complement_stays_positive() {
        let c = cfg(1.0, 1.0);
        assert_eq!(band_stop(10.0, &c), 1.0);
        let tail = band_stop_complement(10.0, &c);
        assert!(tail > 0.0 && tail <= 1e-20);
        assert!((tail - libm::exp(-99.0) / (1.0 + libm::exp(-99.0))).abs() < 1e-60);
        for w in [0.0, 0.5, 1.0, 1.7] {
            assert!((band_stop(w, &c) + band_stop_complement(w, &c) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(BandStopConfig::new(-0.1, 1.0).is_err());
        assert!(BandStopConfig::new(0.1, 0.0).is_err());
        assert!(BandStopConfig::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn extreme_exponents_do_not_overflow() {
        let c = cfg(40.0, 1.0);
        let psi = band_stop(0.0, &c);
        assert!(psi >= 0.0 && psi.is_finite());
        assert_eq!(band_stop(1e6, &c), 1.0);
    }

    #[test]
    fn effective_weight_values() {
        let layer = LatentLayer::new(Tensor::vector(vec![0.0, 0.5, -0.5, 2.0]), cfg(1.0, 1.0)).unwrap();
        let eff = layer.effective_weights();
        assert_eq!(eff.data()[0], 0.0);
        let expected = 0.5 / (1.0 + libm::exp(0.75));
        assert!((eff.data()[1] - expected).abs() < 1e-15);
        assert!((expected - 0.160_410_650_412_303_5).abs() < 1e-12);
        for (e, w) in eff.data().iter().zip(layer.latent.data()) {
            if *w != 0.0 {
                assert_eq!(e.signum(), w.signum());
            }
        }
    }

    #[test]
    fn hard_export_cases() {
        let layer = LatentLayer::new(Tensor::vector(vec![0.1, -0.3, 0.2]), cfg(0.5, 1.0)).unwrap();
        assert!(layer.hard_export().data().iter().all(|&v| v == 0.0));
        let layer = LatentLayer::new(Tensor::vector(vec![0.1, -0.3, 0.2]), cfg(0.0, 1.0)).unwrap();
        assert!(layer.hard_export().data().iter().all(|&v| v != 0.0));
        let layer = LatentLayer::new(Tensor::vector(vec![0.4, -0.6, 0.5, -0.5, 0.9]), cfg(0.5, 1.0)).unwrap();
        let exported = layer.hard_export();
        let eff = layer.effective_weights();
        for (i, &w) in layer.latent.data().iter().enumerate() {
            if w.abs() <= 0.5 {
                assert_eq!(exported.data()[i], 0.0);
            } else {
                assert_eq!(exported.data()[i], eff.data()[i]);
            }
        }
    }

    #[test]
    fn observed_rate_counts() {
        let c = cfg(0.5, 1.0);
        let all = LatentLayer::new(Tensor::vector(vec![0.1, 0.2]), c).unwrap();
        let none = LatentLayer::new(Tensor::vector(vec![0.9, -0.8]), c).unwrap();
        assert_eq!(observed_pruning_rate(&[&all]).unwrap(), 1.0);
        assert_eq!(observed_pruning_rate(&[&none]).unwrap(), 0.0);
        let a = LatentLayer::new(Tensor::vector(vec![0.1, 0.9, -0.2, 0.7]), c).unwrap();
        let b = LatentLayer::new(Tensor::vector(vec![0.6, 0.5, 0.8, -0.95]), c).unwrap();
        assert_eq!(observed_pruning_rate(&[&a, &b]).unwrap(), 0.375);
        assert!(observed_pruning_rate(&[]).is_err());
    }

    #[test]
    fn half_transition_point() {
        for (a, s) in [(0.5, 1.0), (1.0, 4.0), (2.0, 0.25)] {
            let c = cfg(a, s);
            let w = c.half_transition();
            assert!((band_stop(w, &c) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn effective_weights_gradient() {
        let c = cfg(0.6, 1.5);
        let w = Tensor::vector(vec![-0.9, -0.4, 0.05, 0.3, 0.6, 0.95]);
        let err = grad_check(
            |g, v| {
                let e = effective_weights_node(g, v[0], &c)?;
                Ok(g.sum(e))
            },
            &[w],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn sigma_schedule() {
        assert_eq!(SigmaSchedule::Constant.sigma_at(7), 1.0);
        let s = SigmaSchedule::Geometric { sigma0: 4.0, rho: 0.5 };
        assert_eq!(s.sigma_at(2), 1.0);
        assert!(SigmaSchedule::Geometric { sigma0: 0.0, rho: 0.5 }.validate().is_err());
    }

    #[test]
    fn curve_passes_through_half_point() {
        let curve = gate_curve(&cfg(1.0, 1.0), -2.0, 2.0, 401);
        assert_eq!(curve.len(), 401);
        let at_one = curve.iter().find(|(w, _, _)| (*w - 1.0).abs() < 1e-12).unwrap();
        assert!((at_one.1 - 0.5).abs() < 1e-12);
    }
}
