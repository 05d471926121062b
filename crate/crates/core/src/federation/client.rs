use serde::{Deserialize, Serialize};

use super::aggregate::ClientUpdate;
use super::FederationConfig;
use crate::alignment::AlignedSample;
use crate::error::{invalid, Result};
use crate::metrics::Metrics;
use crate::model::FusionConfig;
use crate::numerics::{ParamVector, Profile};
use crate::training::{derive_seed, evaluate, train_epochs, Optimizer};

const SHUFFLE_STREAM: u64 = 0x5348;

/// Seed of a client's batch-shuffling stream. Centralized training uses
/// client 0's stream so a one-client federation replays it exactly.
pub fn client_seed(seed: u64, client_id: usize) -> u64 {
    derive_seed(seed, &[SHUFFLE_STREAM, client_id as u64])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Local,
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub round: usize,
    pub origin: Origin,
    pub client_id: usize,
    pub metrics: Metrics,
    /// Parameter file name inside the snapshot store, when one is attached.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
}

impl Snapshot {
    /// Log order: by round, local before global.
    pub fn position(&self) -> (usize, Origin) {
        (self.round, self.origin)
    }

    /// True when `self` beats `other` for adaptive selection: higher val
    /// accuracy, then higher F1, then later round, then global over local.
    pub fn beats(&self, other: &Snapshot) -> bool {
        let key = |s: &Snapshot| (s.metrics.accuracy, s.metrics.f1, s.round, s.origin);
        key(self).partial_cmp(&key(other)) == Some(std::cmp::Ordering::Greater)
    }
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    pub train: Vec<AlignedSample>,
    pub val: Vec<AlignedSample>,
    /// Latest locally trained model.
    pub params: ParamVector,
    pub optimizer: Optimizer,
    pub snapshots: Vec<Snapshot>,
    /// Best snapshot so far with its parameters.
    pub best: Option<(Snapshot, ParamVector)>,
}

impl ClientState {
    pub fn new(
        client_id: usize,
        train: Vec<AlignedSample>,
        val: Vec<AlignedSample>,
        init: &ParamVector,
        cfg: &FederationConfig,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(invalid(format!("client {client_id} has an empty training split")));
        }
        if val.is_empty() {
            return Err(invalid(format!("client {client_id} has an empty validation split")));
        }
        Ok(Self {
            client_id,
            train,
            val,
            params: init.clone(),
            optimizer: cfg.optimizer.build(init.len()),
            snapshots: Vec::new(),
            best: None,
        })
    }

    /// Score `params` on the validation split and log a snapshot.
    pub fn record(&mut self, round: usize, origin: Origin, params: &ParamVector, model: &FusionConfig) -> Result<Snapshot> {
        let metrics = evaluate(params, &self.val, model)?;
        let snap = Snapshot { round, origin, client_id: self.client_id, metrics, file: None };
        if let Some(last) = self.snapshots.last() {
            if snap.position() <= last.position() {
                return Err(invalid("snapshot log must be strictly ordered"));
            }
        }
        self.snapshots.push(snap.clone());
        if self.best.as_ref().is_none_or(|(b, _)| snap.beats(b)) {
            self.best = Some((snap.clone(), params.clone()));
        }
        Ok(snap)
    }
}

/// Train on the client's split for `local_epochs`, starting from `global`,
/// and log a local snapshot. `round` is 1-based.
pub fn local_update(
    client: &mut ClientState,
    global: &ParamVector,
    round: usize,
    cfg: &FederationConfig,
    model: &FusionConfig,
) -> Result<ClientUpdate> {
    if round == 0 {
        return Err(invalid("rounds are numbered from 1"));
    }
    let mu = cfg.aggregator.proximal_mu();
    let prox = (mu > 0.0).then_some((global, mu));
    let mut local = train_epochs(
        global,
        &mut client.optimizer,
        &client.train,
        model,
        &cfg.train_spec(),
        prox,
        client_seed(cfg.seed, client.client_id),
        (round - 1) * cfg.local_epochs,
        cfg.local_epochs,
    )?;
    if cfg.profile == Profile::Run {
        local.quantize_f32();
    }
    let delta = local.sub(global)?;
    let snap = client.record(round, Origin::Local, &local, model)?;
    client.params = local.clone();
    Ok(ClientUpdate {
        client_id: client.client_id,
        round,
        n_samples: client.train.len(),
        delta,
        local: Some(local),
        metrics: snap.metrics,
    })
}

/// Winner of adaptive selection over a snapshot log.
pub fn select_best(snapshots: &[Snapshot]) -> Option<&Snapshot> {
    snapshots.iter().fold(None, |best: Option<&Snapshot>, s| match best {
        Some(b) if !s.beats(b) => Some(b),
        _ => Some(s),
    })
}
