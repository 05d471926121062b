//! Mini-batch training loop shared by centralized, local, and federated runs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::AlignedSample;
use crate::error::{Error, Result};
use crate::label::Label;
use crate::metrics::{compute_metrics, Metrics};
use crate::model::{batch_loss_grad, forward, FusionConfig, FusionParams};
use crate::numerics::{adamw_step, sgd_step, AdamWConfig, OptimizerState, ParamVector};

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent seed for a sub-stream identified by `path`.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LocalOptimizer {
    AdamW(AdamWConfig),
    /// Plain gradient descent.
    Sgd { lr: f64 },
}

impl Default for LocalOptimizer {
    fn default() -> Self {
        LocalOptimizer::AdamW(AdamWConfig::default())
    }
}

impl LocalOptimizer {
    pub fn lr(&self) -> f64 {
        match self {
            LocalOptimizer::AdamW(c) => c.lr,
            LocalOptimizer::Sgd { lr } => *lr,
        }
    }

    pub fn with_lr(self, lr: f64) -> Self {
        match self {
            LocalOptimizer::AdamW(c) => LocalOptimizer::AdamW(AdamWConfig { lr, ..c }),
            LocalOptimizer::Sgd { .. } => LocalOptimizer::Sgd { lr },
        }
    }

    pub fn build(&self, n_params: usize) -> Optimizer {
        match *self {
            LocalOptimizer::AdamW(c) => Optimizer::AdamW(OptimizerState::new(n_params, c)),
            LocalOptimizer::Sgd { lr } => Optimizer::Sgd { lr },
        }
    }
}

/// Optimizer with its running state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    AdamW(OptimizerState),
    Sgd { lr: f64 },
}

impl Optimizer {
    pub fn step(&mut self, params: &ParamVector, grads: &ParamVector) -> Result<ParamVector> {
        match self {
            Optimizer::AdamW(st) => adamw_step(params, grads, st),
            Optimizer::Sgd { lr } => sgd_step(params, grads, *lr),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub optimizer: LocalOptimizer,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
}

/// Gradient of the proximal penalty `(μ/2)‖ω − anchor‖²`, i.e. `μ(ω − anchor)`.
pub fn fedprox_grad(params: &ParamVector, anchor: &ParamVector, mu: f64) -> Result<ParamVector> {
    params.check_len(anchor)?;
    Ok(ParamVector::new(params.values.iter().zip(&anchor.values).map(|(w, a)| mu * (w - a)).collect()))
}

/// Run `epochs` passes over `data`, continuing the optimizer's state.
///
/// Batches are drawn from a shuffle seeded by `(seed, epoch_offset + e)`; a
/// full batch keeps the data order. With `prox = Some((anchor, μ))` and
/// `μ > 0` the proximal gradient is added to every step.
#[allow(clippy::too_many_arguments)]
pub fn train_epochs(
    params: &ParamVector,
    optimizer: &mut Optimizer,
    data: &[AlignedSample],
    model: &FusionConfig,
    spec: &TrainSpec,
    prox: Option<(&ParamVector, f64)>,
    seed: u64,
    epoch_offset: usize,
    epochs: usize,
) -> Result<ParamVector> {
    if data.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut current = params.clone();
    let n = data.len();
    let batch = spec.batch_size.unwrap_or(n).clamp(1, n);
    for e in 0..epochs {
        let mut order: Vec<usize> = (0..n).collect();
        if batch < n {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[(epoch_offset + e) as u64]));
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            let refs: Vec<&AlignedSample> = chunk.iter().map(|&i| &data[i]).collect();
            let p = FusionParams::load(&current, model)?;
            let (_, mut grad) = batch_loss_grad(&refs, &p, model)?;
            if let Some((anchor, mu)) = prox {
                if mu > 0.0 {
                    grad.add_scaled(&fedprox_grad(&current, anchor, mu)?, 1.0)?;
                }
            }
            current = optimizer.step(&current, &grad)?;
        }
    }
    Ok(current)
}

/// Class predictions for every sample.
pub fn predict_all(params: &ParamVector, data: &[AlignedSample], model: &FusionConfig) -> Result<Vec<Label>> {
    let p = FusionParams::load(params, model)?;
    data.par_iter()
        .map(|s| {
            let (logits, _) = forward(s, &p, model)?;
            Label::from_index(crate::model::argmax(&logits))
        })
        .collect()
}

/// Per-sample logits.
pub fn logits_all(params: &ParamVector, data: &[AlignedSample], model: &FusionConfig) -> Result<Vec<Vec<f64>>> {
    let p = FusionParams::load(params, model)?;
    data.par_iter().map(|s| forward(s, &p, model).map(|(l, _)| l)).collect()
}

pub fn evaluate(params: &ParamVector, data: &[AlignedSample], model: &FusionConfig) -> Result<Metrics> {
    let preds = predict_all(params, data, model)?;
    let labels: Vec<Label> = data.iter().map(|s| s.label).collect();
    compute_metrics(&preds, &labels)
}
