use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Batch, Example, LossBreakdown, S2UTModel};
use crate::corpus::{mix, FrameMatrix};
use crate::error::{config, domain, Error, Result};
use crate::graph::Gradients;
use crate::optim::{inverse_sqrt_lr, Adam, AdamConfig};
use crate::units::{specaugment, MaskPolicy};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup: u64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    pub adam: AdamConfig,
    pub specaugment: Option<MaskPolicy>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(config("batch size must be positive"));
        }
        Ok(())
    }
}

/// Everything needed to continue training bit for bit.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: S2UTModel,
    pub adam: Adam,
    /// Completed optimizer steps.
    pub step: u64,
}

impl TrainState {
    pub fn new(model: S2UTModel, adam: AdamConfig) -> Self {
        let adam = Adam::new(adam, &model.params);
        TrainState { model, adam, step: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: LossBreakdown,
    pub grad_norm: f64,
}

/// Example indices of the batch for 1-based `step`. Each epoch is a fresh
/// shuffle derived from `(seed, epoch)`, so any step can be reproduced
/// without replaying earlier ones.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, step: u64) -> Vec<usize> {
    let per_epoch = n.div_ceil(batch_size) as u64;
    let epoch = (step - 1) / per_epoch;
    let b = ((step - 1) % per_epoch) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, 0xe90c_0000 + epoch)));
    order[b * batch_size..((b + 1) * batch_size).min(n)].to_vec()
}

/// Runs optimizer steps until `state.step == cfg.max_steps`, calling
/// `on_step` after each one.
pub fn train<F>(state: &mut TrainState, data: &[Example], cfg: &TrainConfig, mut on_step: F) -> Result<Vec<StepRecord>>
where
    F: FnMut(&StepRecord, &TrainState) -> Result<()>,
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(domain("training set is empty"));
    }
    let mut grads = Gradients::zeros_like(&state.model.params);
    let mut records = Vec::new();
    while state.step < cfg.max_steps {
        let step = state.step + 1;
        let step_seed = mix(cfg.seed, step);
        let examples: Vec<Example> = batch_indices(data.len(), cfg.batch_size, cfg.seed, step)
            .into_iter()
            .enumerate()
            .map(|(i, idx)| {
                let mut e = data[idx].clone();
                if let Some(policy) = &cfg.specaugment {
                    let fm = FrameMatrix { frames: e.source, hop_ms: 10 };
                    e.source = specaugment(&fm, policy, mix(step_seed ^ 0x5bec, i as u64)).frames;
                }
                e
            })
            .collect();
        let batch = Batch::new(&state.model.config, &examples)?;
        grads.zero();
        let loss = state.model.forward_train(&batch, Some(step_seed), Some(&mut grads))?;
        if let Some((name, _)) = loss.components(&state.model.config).into_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { component: name, step });
        }
        let grad_norm = grads.norm();
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite { component: String::from("gradient"), step });
        }
        let lr = inverse_sqrt_lr(step, cfg.lr, cfg.warmup);
        state.adam.update(&mut state.model.params, &grads, lr);
        state.step = step;
        let record = StepRecord { step, lr, loss, grad_norm };
        log::debug!("step {step} lr {lr:.3e} loss {:.4}", record.loss.total);
        on_step(&record, state)?;
        records.push(record);
    }
    Ok(records)
}
