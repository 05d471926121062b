use serde::{Deserialize, Serialize};

use super::ServerOptConfig;
use crate::error::{invalid, Error, Result};
use crate::metrics::Metrics;
use crate::numerics::ParamVector;

/// What a client sends to the server after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub round: usize,
    pub n_samples: usize,
    pub delta: ParamVector,
    /// The trained local model, when the client sends it along. Lets a lone
    /// client hand its model to the server without a subtract/add round trip.
    pub local: Option<ParamVector>,
    pub metrics: Metrics,
}

impl ClientUpdate {
    pub fn new(client_id: usize, round: usize, n_samples: usize, delta: ParamVector) -> Self {
        Self { client_id, round, n_samples, delta, local: None, metrics: Metrics::default() }
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Reduced fractions `n_i / n`. The numerators of the unreduced fractions
/// sum to the common denominator, so the weights sum to exactly one.
pub fn fedavg_weights(counts: &[usize]) -> Result<Vec<(u64, u64)>> {
    if counts.is_empty() {
        return Err(invalid("no client updates"));
    }
    if counts.contains(&0) {
        return Err(invalid("client update with zero samples"));
    }
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    Ok(counts
        .iter()
        .map(|&c| {
            let g = gcd(c as u64, total);
            (c as u64 / g, total / g)
        })
        .collect())
}

/// Updates sorted by client id, after shape and round checks.
fn ordered<'a>(global: &ParamVector, updates: &'a [ClientUpdate]) -> Result<Vec<&'a ClientUpdate>> {
    if updates.is_empty() {
        return Err(invalid("no client updates"));
    }
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client_id);
    for w in sorted.windows(2) {
        if w[0].client_id == w[1].client_id {
            return Err(invalid(format!("duplicate update from client {}", w[0].client_id)));
        }
    }
    let round = sorted[0].round;
    for u in &sorted {
        global.check_len(&u.delta)?;
        if u.round != round {
            return Err(invalid("updates from different rounds"));
        }
    }
    Ok(sorted)
}

/// Sample-weighted mean of the client deltas, summed in client id order.
fn pseudo_gradient(global: &ParamVector, sorted: &[&ClientUpdate]) -> Result<ParamVector> {
    let counts: Vec<usize> = sorted.iter().map(|u| u.n_samples).collect();
    let weights = fedavg_weights(&counts)?;
    let mut acc = ParamVector::zeros(global.len());
    for (u, (num, den)) in sorted.iter().zip(weights) {
        acc.add_scaled(&u.delta, num as f64 / den as f64)?;
    }
    Ok(acc)
}

/// `ω + Σ (n_i / n) Δ_i`.
pub fn aggregate_fedavg(global: &ParamVector, updates: &[ClientUpdate]) -> Result<ParamVector> {
    let sorted = ordered(global, updates)?;
    if let [only] = sorted.as_slice() {
        if let Some(local) = &only.local {
            global.check_len(local)?;
            return Ok(local.clone());
        }
    }
    let step = pseudo_gradient(global, &sorted)?;
    let mut next = global.clone();
    next.add_scaled(&step, 1.0)?;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdaptiveKind {
    Adam,
    Adagrad,
    Yogi,
}

/// Server optimizer moments, zero-initialized and carried across rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl ServerState {
    pub fn new(n: usize) -> Self {
        Self { first_moment: vec![0.0; n], second_moment: vec![0.0; n] }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Treat the weighted mean delta as a gradient and take one server step:
///
/// ```text
/// m ← β1·m + (1 − β1)·Δ̄
/// v ← v + Δ̄²                               (Adagrad)
/// v ← β2·v + (1 − β2)·Δ̄²                   (Adam)
/// v ← v − (1 − β2)·Δ̄²·sign(v − Δ̄²)         (Yogi)
/// ω ← ω + η·m / (√v + τ)
/// ```
pub fn aggregate_adaptive(
    global: &ParamVector,
    updates: &[ClientUpdate],
    state: &mut ServerState,
    kind: AdaptiveKind,
    cfg: &ServerOptConfig,
) -> Result<ParamVector> {
    if !(cfg.tau > 0.0) {
        return Err(Error::InvalidConfig("server tau must be > 0".into()));
    }
    if state.first_moment.len() != global.len() || state.second_moment.len() != global.len() {
        return Err(Error::LengthMismatch { expected: global.len(), got: state.first_moment.len() });
    }
    let sorted = ordered(global, updates)?;
    let step = pseudo_gradient(global, &sorted)?;
    let mut next = global.clone();
    for (i, &d) in step.values.iter().enumerate() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * d;
        let d2 = d * d;
        *v = match kind {
            AdaptiveKind::Adagrad => *v + d2,
            AdaptiveKind::Adam => cfg.beta2 * *v + (1.0 - cfg.beta2) * d2,
            AdaptiveKind::Yogi => *v - (1.0 - cfg.beta2) * d2 * sign(*v - d2),
        };
        next.values[i] += cfg.eta * *m / (v.sqrt() + cfg.tau);
    }
    if !next.is_finite() {
        return Err(Error::NumericOverflow);
    }
    Ok(next)
}
