//! Training: the global objective `L_e + λ·D_KL(P || Q)` optimized with
//! Adam, the two-stage magnitude-pruning baseline, and evaluation.

mod baseline;
mod eval;
mod optim;

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{CompGraph, Var};
use crate::bandstop::{observed_pruning_rate, BandStopConfig, SigmaSchedule};
use crate::data::Dataset;
use crate::distributions::{DiscreteLaw, Law, QuantileMode, TargetDistribution};
use crate::error::{Error, Result};
use crate::gcn::{GcnConfig, GcnModel, GraphSample, ModelVars};
use crate::histogram::{kld_on_grid, soft_histogram, BinGrid};
use crate::tensor::Tensor;

pub use baseline::{magnitude_prune_mask, train_mp_baseline};
pub use eval::{argmax, evaluate, macro_accuracy, Evaluation};
pub use optim::{adam_step, AdamState, LrState, LR_DECAY};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the KL term.
    pub lambda: f64,
    /// Targeted pruning rate in `[0, 1)`.
    pub rate: f64,
    /// Target law, truncated to `omega` before use.
    pub target: Law,
    pub bins: usize,
    pub omega: (f64, f64),
    pub lr0: f64,
    pub lr_min: f64,
    pub lr_max: f64,
    pub seed: u64,
    pub quantile_mode: QuantileMode,
    pub sigma_schedule: SigmaSchedule,
    /// Epochs of masked retraining in the magnitude-pruning baseline.
    pub retrain_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 32,
            lambda: 10.0,
            rate: 0.0,
            target: Law::Gaussian { mean: 0.0, std: 0.07 },
            bins: 100,
            omega: (-0.2, 0.2),
            lr0: 0.004,
            lr_min: 1e-5,
            lr_max: 0.004,
            seed: 0,
            quantile_mode: QuantileMode::Magnitude,
            sigma_schedule: SigmaSchedule::Constant,
            retrain_epochs: 300,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate >= 0.0 && self.rate < 1.0) {
            return Err(Error::Contract(format!("rate must satisfy 0 <= r < 1, got {}", self.rate)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Contract(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Contract("epochs and batch_size must be positive".into()));
        }
        LrState::new(self.lr0, self.lr_min, self.lr_max)?;
        self.sigma_schedule.validate()?;
        self.grid()?;
        self.target_distribution()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<BinGrid> {
        BinGrid::uniform(self.omega.0, self.omega.1, self.bins)
    }

    /// The target law restricted to `omega`.
    pub fn target_distribution(&self) -> Result<TargetDistribution> {
        TargetDistribution::new(self.target)?.truncated(self.omega.0, self.omega.1)
    }

    /// Gate threshold `a` for the configured rate.
    pub fn threshold(&self) -> Result<f64> {
        self.target_distribution()?.threshold(self.rate, self.quantile_mode)
    }
}

/// Metrics recorded after each epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub ce: f64,
    pub kld: f64,
    pub observed_pr: f64,
    pub lr: f64,
    pub test_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Trained model; latents are still gated for PMP.
    pub model: GcnModel,
    /// Inference model with the binary mask applied.
    pub exported: GcnModel,
    pub history: Vec<EpochMetrics>,
    /// Magnitude at or below which weights are pruned.
    pub threshold: f64,
    pub observed_pr: f64,
    pub test_accuracy: Option<f64>,
    /// Discretized target, when a KL term was used.
    pub target: Option<DiscreteLaw>,
}

/// Direction of the KL term over a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KldTrend {
    pub initial: f64,
    pub last: f64,
    pub min: f64,
    pub decreased: bool,
}

pub fn kld_trend(history: &[EpochMetrics]) -> Option<KldTrend> {
    let first = history.first()?;
    let last = history.last()?;
    let min = history.iter().map(|m| m.kld).fold(f64::INFINITY, f64::min);
    Some(KldTrend { initial: first.kld, last: last.kld, min, decreased: last.kld < first.kld })
}

/// Graph nodes of the global objective.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub ce: Var,
    pub kld: Option<Var>,
}

/// `mean CE(batch) + λ · D_KL(P || Q(latents))` built on `g`.
///
/// With `λ = 0` or no prior, the objective is the cross-entropy alone.
pub fn global_loss(
    g: &mut CompGraph,
    model: &GcnModel,
    vars: &ModelVars,
    batch: &[&GraphSample],
    prior: Option<(&DiscreteLaw, &BinGrid)>,
    lambda: f64,
) -> Result<LossTerms> {
    if batch.is_empty() {
        return Err(Error::Contract("global loss over an empty batch".into()));
    }
    let x = g.constant(model.batch_input(batch)?);
    let logits = model.logits(g, vars, x, batch.len())?;
    let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
    let ce = g.softmax_cross_entropy(logits, &labels)?;
    match prior {
        Some((p, grid)) if lambda > 0.0 => {
            let q = soft_histogram(g, &vars.latents(), grid)?;
            let kld = kld_on_grid(g, p, q, grid)?;
            let l = g.scalar(lambda);
            let weighted = g.mul(l, kld)?;
            let total = g.add(ce, weighted)?;
            Ok(LossTerms { total, ce, kld: Some(kld) })
        }
        _ => Ok(LossTerms { total: ce, ce, kld: None }),
    }
}

/// One optimization phase over the training split.
pub(crate) struct Phase<'a> {
    pub epochs: usize,
    pub first_epoch: usize,
    pub lambda: f64,
    pub prior: Option<(&'a DiscreteLaw, &'a BinGrid)>,
    /// Per parameter (in `params_mut` order): entries frozen at zero.
    pub frozen: Option<&'a [Vec<bool>]>,
    pub sigma_schedule: SigmaSchedule,
}

pub(crate) fn shuffle_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn run_phase(
    model: &mut GcnModel,
    data: &Dataset,
    cfg: &TrainConfig,
    phase: &Phase<'_>,
    rng: &mut ChaCha8Rng,
    observed: &dyn Fn(&GcnModel) -> Result<f64>,
    history: &mut Vec<EpochMetrics>,
) -> Result<()> {
    if data.train.is_empty() {
        return Err(Error::Contract("no training samples".into()));
    }
    let sizes: Vec<usize> = model.params_mut().iter().map(|(t, _)| t.numel()).collect();
    let mut adam = AdamState::new(sizes);
    let mut lr = LrState::new(cfg.lr0, cfg.lr_min, cfg.lr_max)?;
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for e in 0..phase.epochs {
        let epoch = phase.first_epoch + e;
        if model.gated {
            let sigma = phase.sigma_schedule.sigma_at(e);
            model.set_band_stop(model.band_stop().with_sigma(sigma)?);
        }
        order.shuffle(rng);
        let (mut loss_sum, mut ce_sum, mut kld_sum, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&GraphSample> = idx.iter().map(|&i| &data.train[i]).collect();
            let mut g = CompGraph::new();
            let vars = model.bind(&mut g);
            let terms = global_loss(&mut g, model, &vars, &batch, phase.prior, phase.lambda)?;
            let total = g.value(terms.total).item();
            if !total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!(
                        "non-finite loss {total} after {batches} batches; last epoch: {:?}",
                        history.last()
                    ),
                });
            }
            loss_sum += total;
            ce_sum += g.value(terms.ce).item();
            kld_sum += terms.kld.map_or(0.0, |k| g.value(k).item());
            batches += 1;

            let grads = g.backward(terms.total)?;
            let mut grad_tensors: Vec<Tensor> = vars.all().iter().map(|&v| grads.wrt(v)).collect();
            if let Some(frozen) = phase.frozen {
                for (gt, mask) in grad_tensors.iter_mut().zip(frozen) {
                    for (gv, &f) in gt.data_mut().iter_mut().zip(mask) {
                        if f {
                            *gv = 0.0;
                        }
                    }
                }
            }
            let mut params: Vec<&mut Tensor> = model.params_mut().into_iter().map(|(t, _)| t).collect();
            adam_step(&mut params, &grad_tensors, &mut adam, lr.lr)?;
        }
        model.check_finite().map_err(|err| Error::Diverged { epoch, detail: format!("{err}") })?;

        let n = batches as f64;
        let loss = loss_sum / n;
        let test_acc = if data.test.is_empty() {
            None
        } else {
            Some(evaluate(&model.hard_export(), &data.test)?.accuracy)
        };
        history.push(EpochMetrics {
            epoch,
            loss,
            ce: ce_sum / n,
            kld: kld_sum / n,
            observed_pr: observed(model)?,
            lr: lr.lr,
            test_acc,
        });
        lr.observe(loss);
    }
    Ok(())
}

/// Builds a fresh model for `data`.
pub fn init_model(gcn: &GcnConfig, gate: Option<BandStopConfig>, seed: u64) -> Result<GcnModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GcnModel::init(gcn.clone(), gate, &mut rng)
}

/// Single-stage probabilistic magnitude pruning.
///
/// The gate threshold is read once from the truncated target law, the KL
/// term keeps the latent-weight histogram on that law, and the final model
/// is hard-exported with `|ŵ| ≤ a` set to zero.
pub fn train_pmp(data: &Dataset, gcn: &GcnConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let a = cfg.threshold()?;
    let grid = cfg.grid()?;
    let target = cfg.target_distribution()?.discretize(&grid)?;
    let sigma0 = cfg.sigma_schedule.sigma_at(0);
    let mut model = init_model(gcn, Some(BandStopConfig::new(a, sigma0)?), cfg.seed)?;
    let mut rng = shuffle_rng(cfg.seed, 1);
    let mut history = Vec::with_capacity(cfg.epochs);
    let phase = Phase {
        epochs: cfg.epochs,
        first_epoch: 0,
        lambda: cfg.lambda,
        prior: Some((&target, &grid)),
        frozen: None,
        sigma_schedule: cfg.sigma_schedule,
    };
    let observed = |m: &GcnModel| observed_pruning_rate(&m.prunable_layers());
    run_phase(&mut model, data, cfg, &phase, &mut rng, &observed, &mut history)?;

    let exported = model.hard_export();
    let observed_pr = observed_pruning_rate(&model.prunable_layers())?;
    let test_accuracy = history.last().and_then(|m| m.test_acc);
    Ok(TrainOutcome { model, exported, history, threshold: a, observed_pr, test_accuracy, target: Some(target) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SynthSpec;
    use crate::gradcheck::grad_check;

    fn tiny() -> (Dataset, GcnConfig) {
        let spec = SynthSpec { joints: 4, classes: 2, per_class: 4, frames: 8, chunks: 2, ..SynthSpec::default() };
        let data = spec.dataset().unwrap();
        let mut gcn = GcnConfig::new(data.raw_dim(), 2, data.adjacency.clone()).unwrap();
        gcn.embed_dim = 3;
        gcn.heads = 2;
        gcn.filters = 2;
        gcn.dense_dim = 3;
        (data, gcn)
    }

    #[test]
    fn zero_lambda_is_cross_entropy() {
        let (data, gcn) = tiny();
        let model = init_model(&gcn, Some(BandStopConfig::new(0.1, 1.0).unwrap()), 3).unwrap();
        let grid = BinGrid::uniform(-1.0, 1.0, 10).unwrap();
        let p = TargetDistribution::gaussian(0.0, 0.3).unwrap().discretize(&grid).unwrap();
        let batch: Vec<&GraphSample> = data.train.iter().collect();
        let mut g = CompGraph::new();
        let vars = model.bind(&mut g);
        let t = global_loss(&mut g, &model, &vars, &batch, Some((&p, &grid)), 0.0).unwrap();
        assert!(t.kld.is_none());
        assert_eq!(g.value(t.total).item(), g.value(t.ce).item());
        let t = global_loss(&mut g, &model, &vars, &batch, Some((&p, &grid)), 10.0).unwrap();
        let k = g.value(t.kld.unwrap()).item();
        assert!((g.value(t.total).item() - (g.value(t.ce).item() + 10.0 * k)).abs() < 1e-12);
    }

    #[test]
    fn global_loss_gradient_matches_finite_differences() {
        let (data, gcn) = tiny();
        let model = init_model(&gcn, Some(BandStopConfig::new(0.05, 1.0).unwrap()), 5).unwrap();
        let grid = BinGrid::uniform(-1.0, 1.0, 12).unwrap();
        let p = TargetDistribution::laplace(0.0, 0.2).unwrap().discretize(&grid).unwrap();
        let batch: Vec<&GraphSample> = data.train.iter().take(3).collect();
        let mut params: Vec<Tensor> = {
            let mut m = model.clone();
            m.params_mut().into_iter().map(|(t, _)| t.clone()).collect()
        };
        // Scale latents up so the gate and histogram are in their active range.
        for t in params.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= 3.0);
        }
        let err = grad_check(
            |g, vs| {
                let mut m = model.clone();
                for ((t, _), v) in m.params_mut().into_iter().zip(vs) {
                    *t = g.value(*v).clone();
                }
                let vars = ModelVars::from_leaves(&m, vs)?;
                Ok(global_loss(g, &m, &vars, &batch, Some((&p, &grid)), 10.0)?.total)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.rate = 1.0;
        assert!(c.validate().is_err());
        c.rate = 0.5;
        c.lambda = -1.0;
        assert!(c.validate().is_err());
        c.lambda = 1.0;
        c.lr_min = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_rate_prunes_nothing() {
        let (data, gcn) = tiny();
        let cfg = TrainConfig { epochs: 3, batch_size: 4, ..TrainConfig::default() };
        let out = train_pmp(&data, &gcn, &cfg).unwrap();
        assert_eq!(out.threshold, 0.0);
        assert_eq!(out.observed_pr, 0.0);
        assert!(out.exported.prunable_layers().iter().all(|l| l.latent.data().iter().all(|&v| v != 0.0)));
        assert_eq!(out.history.len(), 3);
    }

    #[test]
    fn training_is_deterministic() {
        let (data, gcn) = tiny();
        let cfg = TrainConfig { epochs: 4, batch_size: 3, rate: 0.5, ..TrainConfig::default() };
        let a = train_pmp(&data, &gcn, &cfg).unwrap();
        let b = train_pmp(&data, &gcn, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
    }
}
