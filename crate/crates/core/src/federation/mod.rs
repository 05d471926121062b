//! Cross-silo federation: partitioning, client training, server aggregation,
//! snapshot tracking, and deployment strategies.
//!
//! One round distributes the global model, lets every client train locally
//! and score the result on its validation split, aggregates the deltas on
//! the server, and has every client score the new global model. Each client
//! thereby logs two snapshots per round.

mod aggregate;
mod client;
mod engine;
mod partition;
mod store;

use serde::{Deserialize, Serialize};

pub use aggregate::{
    aggregate_adaptive, aggregate_fedavg, fedavg_weights, AdaptiveKind, ClientUpdate, ServerState,
};
pub use client::{client_seed, local_update, select_best, ClientState, Origin, Snapshot};
pub use engine::{Deployment, Federation};
pub use partition::{partition, stratified_split};
pub use store::{config_hash, ClientCheckpoint, SnapshotRecord, SnapshotStore, StoreManifest};

use crate::error::{Error, Result};
use crate::numerics::{AdamWConfig, Profile};
use crate::training::{LocalOptimizer, TrainSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Aggregator {
    #[default]
    FedAvg,
    FedProx {
        mu: f64,
    },
    FedAdam,
    FedAdagrad,
    FedYogi,
}

impl Aggregator {
    pub fn name(&self) -> &'static str {
        match self {
            Aggregator::FedAvg => "FedAvg",
            Aggregator::FedProx { .. } => "FedProx",
            Aggregator::FedAdam => "FedAdam",
            Aggregator::FedAdagrad => "FedAdagrad",
            Aggregator::FedYogi => "FedYogi",
        }
    }

    pub fn adaptive_kind(&self) -> Option<AdaptiveKind> {
        match self {
            Aggregator::FedAdam => Some(AdaptiveKind::Adam),
            Aggregator::FedAdagrad => Some(AdaptiveKind::Adagrad),
            Aggregator::FedYogi => Some(AdaptiveKind::Yogi),
            _ => None,
        }
    }

    pub fn proximal_mu(&self) -> f64 {
        match self {
            Aggregator::FedProx { mu } => *mu,
            _ => 0.0,
        }
    }
}

/// Server-side optimizer hyperparameters for the adaptive aggregators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerOptConfig {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub tau: f64,
}

impl Default for ServerOptConfig {
    fn default() -> Self {
        Self { eta: 1.0, beta1: 0.9, beta2: 0.99, tau: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Strategy {
    /// Every client deploys the final global model.
    #[default]
    Sfl,
    /// The final global model fine-tuned on each client's training split.
    Pfl { fine_tune_epochs: usize },
    /// Each client deploys its best snapshot by validation accuracy.
    Afl,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Sfl => "sFL",
            Strategy::Pfl { .. } => "pFL",
            Strategy::Afl => "aFL",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PartitionScheme {
    #[default]
    Uniform,
    /// Label skew: each class is spread over clients by Dirichlet(α) proportions.
    Dirichlet { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FederationConfig {
    pub clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub optimizer: LocalOptimizer,
    pub aggregator: Aggregator,
    pub server: ServerOptConfig,
    pub strategy: Strategy,
    pub partition: PartitionScheme,
    pub val_fraction: f64,
    pub seed: u64,
    pub profile: Profile,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            clients: 3,
            rounds: 30,
            local_epochs: 1,
            batch_size: Some(64),
            optimizer: LocalOptimizer::AdamW(AdamWConfig::default()),
            aggregator: Aggregator::FedAvg,
            server: ServerOptConfig::default(),
            strategy: Strategy::Sfl,
            partition: PartitionScheme::Uniform,
            val_fraction: 0.2,
            seed: 0,
            profile: Profile::Test,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.clients == 0 {
            return bad("clients must be >= 1");
        }
        if self.rounds == 0 {
            return bad("rounds must be >= 1");
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be >= 1");
        }
        if !(self.optimizer.lr() > 0.0) {
            return bad("learning rate must be positive");
        }
        let mu = self.aggregator.proximal_mu();
        if !(mu >= 0.0) {
            return bad("proximal mu must be >= 0");
        }
        if self.aggregator.adaptive_kind().is_some() && !(self.server.tau > 0.0) {
            return bad("server tau must be > 0");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must lie in [0, 1)");
        }
        if let PartitionScheme::Dirichlet { alpha } = self.partition {
            if !(alpha > 0.0) {
                return bad("dirichlet alpha must be > 0");
            }
        }
        Ok(())
    }

    pub fn train_spec(&self) -> TrainSpec {
        TrainSpec { optimizer: self.optimizer, batch_size: self.batch_size }
    }
}
