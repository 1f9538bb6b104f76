//! Two-stage magnitude pruning: dense training, global magnitude cut, then
//! retraining with the pruned entries held at zero.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gcn::{GcnConfig, GcnModel};
use crate::math;
use crate::tensor::Tensor;

use super::{init_model, run_phase, shuffle_rng, Phase, TrainConfig, TrainOutcome};

/// Marks the `round(r·N)` smallest-magnitude entries over all `tensors`.
///
/// Ties in magnitude are broken by flat position (earlier tensors first).
pub fn magnitude_prune_mask(tensors: &[&Tensor], rate: f64) -> Result<Vec<Vec<bool>>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Contract(alloc::format!("rate must satisfy 0 <= r < 1, got {rate}")));
    }
    let mut flat: Vec<(f64, usize)> = Vec::new();
    for t in tensors {
        let base = flat.len();
        flat.extend(t.data().iter().enumerate().map(|(i, v)| (math::abs(*v), base + i)));
    }
    let k = math::round(rate * flat.len() as f64) as usize;
    flat.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let mut pruned = vec![false; flat.len()];
    for &(_, i) in &flat[..k] {
        pruned[i] = true;
    }
    let mut out = Vec::with_capacity(tensors.len());
    let mut rest = pruned.as_slice();
    for t in tensors {
        let (head, tail) = rest.split_at(t.numel());
        out.push(head.to_vec());
        rest = tail;
    }
    Ok(out)
}

fn zero_fraction(model: &GcnModel) -> Result<f64> {
    let layers = model.prunable_layers();
    let total: usize = layers.iter().map(|l| l.numel()).sum();
    if total == 0 {
        return Err(Error::Contract("observed pruning rate of an empty model".into()));
    }
    let zeros: usize = layers.iter().map(|l| l.latent.data().iter().filter(|&&v| v == 0.0).count()).sum();
    Ok(zeros as f64 / total as f64)
}

/// Magnitude-pruning baseline at rate `cfg.rate`.
///
/// Stage one trains the dense model for `cfg.epochs` with the cross-entropy
/// alone. Stage two zeroes the globally smallest weights and retrains for
/// `cfg.retrain_epochs` with a fresh optimizer state; it is skipped when
/// the rate is zero.
pub fn train_mp_baseline(data: &Dataset, gcn: &GcnConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = init_model(gcn, None, cfg.seed)?;
    let mut rng = shuffle_rng(cfg.seed, 1);
    let mut history = Vec::with_capacity(cfg.epochs + cfg.retrain_epochs);
    let dense = Phase {
        epochs: cfg.epochs,
        first_epoch: 0,
        lambda: 0.0,
        prior: None,
        frozen: None,
        sigma_schedule: cfg.sigma_schedule,
    };
    run_phase(&mut model, data, cfg, &dense, &mut rng, &zero_fraction, &mut history)?;

    let mut threshold = 0.0;
    if cfg.rate > 0.0 {
        let layer_mask = {
            let latents: Vec<&Tensor> = model.prunable_layers().iter().map(|l| &l.latent).collect();
            magnitude_prune_mask(&latents, cfg.rate)?
        };
        for (l, mask) in model.prunable_layers_mut().into_iter().zip(&layer_mask) {
            for (v, &p) in l.latent.data_mut().iter_mut().zip(mask) {
                if p {
                    threshold = f64::max(threshold, math::abs(*v));
                    *v = 0.0;
                }
            }
        }
        let mut layer_iter = layer_mask.into_iter();
        let frozen: Vec<Vec<bool>> = model
            .params_mut()
            .into_iter()
            .map(|(t, prunable)| if prunable { layer_iter.next().expect("mask per layer") } else { vec![false; t.numel()] })
            .collect();
        let retrain = Phase {
            epochs: cfg.retrain_epochs,
            first_epoch: cfg.epochs,
            lambda: 0.0,
            prior: None,
            frozen: Some(&frozen),
            sigma_schedule: cfg.sigma_schedule,
            };
        run_phase(&mut model, data, cfg, &retrain, &mut rng, &zero_fraction, &mut history)?;
    }

    let observed_pr = zero_fraction(&model)?;
    let test_accuracy = history.last().and_then(|m| m.test_acc);
    let exported = model.clone();
    Ok(TrainOutcome { model, exported, history, threshold, observed_pr, test_accuracy, target: None })
}
