//! Experiment orchestration: k-fold cross-validation over the centralized,
//! local-only, and federated paradigms, grid search, and report tables.

mod grid;
mod report;
mod run;

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use grid::{apply_point, grid_search, GridReport, GridRow, Objective};
pub use report::{emit_report, format_percent, read_reports, write_reports, ReportTables};
pub use run::{run_experiment, train_fold, FoldOutcome, FoldResult, RunReport, SeedSummary};

pub use crate::metrics::{compute_metrics, Metrics};

use crate::augmentation::SynthCorpusConfig;
use crate::error::{invalid, Error, Result};
use crate::federation::FederationConfig;
use crate::label::Label;
use crate::model::{FusionConfig, Modality};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
pub enum Paradigm {
    /// One model on the pooled training data.
    #[serde(rename = "CL")]
    Centralized,
    /// One model per client, no communication.
    #[serde(rename = "LL")]
    Local,
    #[default]
    #[serde(rename = "FL")]
    Federated,
}

impl Paradigm {
    pub const ALL: [Paradigm; 3] = [Paradigm::Centralized, Paradigm::Local, Paradigm::Federated];

    pub fn name(self) -> &'static str {
        match self {
            Paradigm::Centralized => "CL",
            Paradigm::Local => "LL",
            Paradigm::Federated => "FL",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusSource {
    /// Generated per seed; the run seed is added to the generator seed.
    Synthetic(SynthCorpusConfig),
    /// A corpus directory in the ingestion layout.
    Path(PathBuf),
}

impl Default for CorpusSource {
    fn default() -> Self {
        CorpusSource::Synthetic(SynthCorpusConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub paradigm: Paradigm,
    pub modality: Modality,
    pub augment: bool,
    pub folds: usize,
    pub model: FusionConfig,
    pub federation: FederationConfig,
    pub corpus: CorpusSource,
    /// Grid-search space: parameter name to candidate values.
    pub grid: BTreeMap<String, Vec<f64>>,
    pub seeds: Vec<u64>,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
    /// Root directory for federation snapshot stores.
    pub snapshot_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let corpus = SynthCorpusConfig::default();
        Self {
            paradigm: Paradigm::Federated,
            modality: Modality::Both,
            augment: false,
            folds: 5,
            model: FusionConfig {
                hidden_dim: corpus.d,
                heads: 2,
                max_len: corpus.max_len,
                mlp_hidden: 16,
                ..FusionConfig::default()
            },
            federation: FederationConfig::default(),
            corpus: CorpusSource::Synthetic(corpus),
            grid: BTreeMap::new(),
            seeds: vec![0],
            workers: None,
            snapshot_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidConfig("folds must be >= 2".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidConfig("workers must be >= 1".into()));
        }
        self.model_config().validate()?;
        self.federation.validate()?;
        if let CorpusSource::Synthetic(c) = &self.corpus {
            c.validate()?;
        }
        Ok(())
    }

    /// Model configuration with the experiment's modality applied.
    pub fn model_config(&self) -> FusionConfig {
        FusionConfig { modality: self.modality, ..self.model }
    }

    /// Hash of every setting that can change results. Worker count and
    /// snapshot location are left out.
    pub fn hash(&self) -> Result<String> {
        let canonical = ExperimentConfig { workers: None, snapshot_dir: None, ..self.clone() };
        crate::federation::config_hash(&canonical)
    }

    /// Override the run seed list with a single seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seeds = vec![seed];
        self
    }
}

/// Stratified k-fold split into `(train, test)` index pairs.
///
/// Each class is shuffled and dealt round-robin over the folds, continuing
/// the deal across classes, so fold sizes differ by at most one.
pub fn kfold_split(labels: &[Label], k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(invalid("k-fold split needs k >= 2"));
    }
    if k > labels.len() {
        return Err(invalid(format!("cannot split {} samples into {k} folds", labels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut slot = 0;
    for class in Label::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            folds[slot % k].push(i);
            slot += 1;
        }
    }
    Ok(folds
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let train = (0..labels.len()).filter(|i| test.binary_search(i).is_err()).collect();
            (train, test)
        })
        .collect())
}
