use std::collections::HashSet;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{kfold_split, CorpusSource, ExperimentConfig, Paradigm};
use crate::augmentation::{augment_dataset, load_corpus, synth_generate, Converter, Sample, SynthGenerator};
use crate::error::{invalid, Error, Result};
use crate::federation::{client_seed, config_hash, partition, stratified_split, ClientState, Federation, SnapshotStore};
use crate::label::Label;
use crate::metrics::{compute_metrics, Metrics};
use crate::model::{FusionConfig, FusionParams, Modality};
use crate::alignment::AlignedSample;
use crate::numerics::ParamVector;
use crate::training::{derive_seed, evaluate, logits_all, train_epochs};

const FOLD_STREAM: u64 = 0x464f;
const PARTITION_STREAM: u64 = 0x5041;
const SPLIT_STREAM: u64 = 0x5350;
const AUGMENT_STREAM: u64 = 0x4147;
const INIT_STREAM: u64 = 0x494e;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub seed: u64,
    pub fold: usize,
    /// Mean over the deployed per-client models (the single model for CL).
    pub metrics: Metrics,
    pub per_client: Vec<Metrics>,
    /// Logit-average ensemble of the federated deployment models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<Metrics>,
    pub train_size: usize,
    pub test_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub metrics: Metrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<Metrics>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub paradigm: Paradigm,
    pub modality: Modality,
    pub augment: bool,
    /// Aggregator and strategy names for federated runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
    pub folds: Vec<FoldResult>,
    pub per_seed: Vec<SeedSummary>,
    pub mean: Metrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_ensemble: Option<Metrics>,
    /// Wall-clock seconds; kept out of the JSON so reruns compare equal.
    #[serde(skip)]
    pub runtime_secs: f64,
}

impl PartialEq for RunReport {
    /// Equality ignores the runtime.
    fn eq(&self, other: &Self) -> bool {
        let (a, b) = (self, other);
        a.config_hash == b.config_hash
            && a.seeds == b.seeds
            && a.paradigm == b.paradigm
            && a.modality == b.modality
            && a.augment == b.augment
            && a.aggregator == b.aggregator
            && a.strategy == b.strategy
            && a.folds == b.folds
            && a.per_seed == b.per_seed
            && a.mean == b.mean
            && a.mean_ensemble == b.mean_ensemble
    }
}

/// Result of one fold plus the models that produced it.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub result: FoldResult,
    pub models: Vec<ParamVector>,
}

fn mean_metrics(items: &[Metrics]) -> Metrics {
    let n = items.len() as f64;
    Metrics {
        accuracy: items.iter().map(|m| m.accuracy).sum::<f64>() / n,
        f1: items.iter().map(|m| m.f1).sum::<f64>() / n,
    }
}

fn features(samples: &[Sample]) -> Vec<AlignedSample> {
    samples.iter().map(|s| s.features.clone()).collect()
}

fn labels(samples: &[Sample]) -> Vec<Label> {
    samples.iter().map(|s| s.label).collect()
}

fn pick(samples: &[Sample], idx: &[usize]) -> Vec<Sample> {
    idx.iter().map(|&i| samples[i].clone()).collect()
}

fn check_shapes(samples: &[Sample], model: &FusionConfig) -> Result<()> {
    for s in samples {
        let f = &s.features;
        if f.audio.cols() != model.hidden_dim || f.text.cols() != model.hidden_dim || f.audio.rows() != model.max_len {
            return Err(Error::DimensionMismatch(format!(
                "sample {} is {}x{}, model expects {}x{}",
                s.id, f.audio.rows(), f.audio.cols(), model.max_len, model.hidden_dim
            )));
        }
    }
    Ok(())
}

/// Original sample id behind a possibly recombined id.
fn root_id(id: &str) -> &str {
    id.split('~').next().unwrap_or(id)
}

fn augment_split(train: Vec<Sample>, seed: u64, converter: Option<&dyn Converter>, client: usize) -> Result<Vec<Sample>> {
    let conv = converter.ok_or_else(|| invalid("augmentation needs a corpus with a converter"))?;
    if Label::ALL.iter().any(|&l| train.iter().all(|s| s.label != l)) {
        log::warn!("client {client} holds a single class; its training split is not augmented");
        return Ok(train);
    }
    augment_dataset(&train, seed, conv)
}

/// Train and score one paradigm on one fold.
///
/// Every paradigm carves the same per-client train/validation splits, so a
/// one-client federation and centralized training see identical data and
/// shuffles. Only training splits are ever augmented.
pub fn train_fold(
    cfg: &ExperimentConfig,
    train: &[Sample],
    test: &[Sample],
    converter: Option<&dyn Converter>,
    seed: u64,
    fold: usize,
) -> Result<FoldOutcome> {
    let model = cfg.model_config();
    check_shapes(train, &model)?;
    check_shapes(test, &model)?;
    let job = derive_seed(seed, &[fold as u64]);
    let init = FusionParams::init(&model, derive_seed(job, &[INIT_STREAM])).flatten(&model);
    let fed = &cfg.federation;
    let clients = match cfg.paradigm {
        Paradigm::Centralized => 1,
        _ => fed.clients,
    };
    let shards = if clients == 1 {
        vec![(0..train.len()).collect::<Vec<_>>()]
    } else {
        partition(&labels(train), fed.partition, clients, derive_seed(job, &[PARTITION_STREAM]))?
    };

    let mut splits = Vec::with_capacity(clients);
    for (i, shard) in shards.iter().enumerate() {
        let local = pick(train, shard);
        let (tr, va) = stratified_split(&labels(&local), fed.val_fraction, derive_seed(job, &[SPLIT_STREAM, i as u64]))?;
        let mut tr = pick(&local, &tr);
        if cfg.augment {
            tr = augment_split(tr, derive_seed(job, &[AUGMENT_STREAM, i as u64]), converter, i)?;
        }
        splits.push((tr, pick(&local, &va)));
    }

    let test_ids: HashSet<&str> = test.iter().map(|s| root_id(&s.id)).collect();
    for (tr, va) in &splits {
        if tr.iter().chain(va).any(|s| test_ids.contains(root_id(&s.id))) {
            return Err(invalid("a test sample leaked into training data"));
        }
    }

    let test_x = features(test);
    let epochs = fed.rounds * fed.local_epochs;
    let (models, ensemble) = match cfg.paradigm {
        Paradigm::Centralized | Paradigm::Local => {
            let models = splits
                .par_iter()
                .enumerate()
                .map(|(i, (tr, _))| {
                    let mut opt = fed.optimizer.build(init.len());
                    train_epochs(&init, &mut opt, &features(tr), &model, &fed.train_spec(), None, client_seed(job, i), 0, epochs)
                })
                .collect::<Result<Vec<_>>>()?;
            (models, None)
        }
        Paradigm::Federated => {
            let fcfg = crate::federation::FederationConfig { seed: job, ..*fed };
            let states = splits
                .iter()
                .enumerate()
                .map(|(i, (tr, va))| ClientState::new(i, features(tr), features(va), &init, &fcfg))
                .collect::<Result<Vec<_>>>()?;
            let mut federation = Federation::new(fcfg, model, states, init.clone())?;
            match &cfg.snapshot_dir {
                Some(root) => {
                    let dir = root.join(format!("seed{seed}")).join(format!("fold{fold}"));
                    let hash = config_hash(&(cfg.hash()?, seed, fold))?;
                    let mut store = SnapshotStore::open(&dir, &hash, fcfg.profile.dtype())?;
                    federation.resume(&store)?;
                    federation.run(Some(&mut store))?;
                }
                None => federation.run(None)?,
            }
            let models: Vec<ParamVector> = federation.finalize()?.into_iter().map(|d| d.params).collect();
            let ensemble = ensemble_metrics(&models, &test_x, &model, test)?;
            (models, Some(ensemble))
        }
    };
    let per_client = models.iter().map(|m| evaluate(m, &test_x, &model)).collect::<Result<Vec<_>>>()?;
    let result = FoldResult {
        seed,
        fold,
        metrics: mean_metrics(&per_client),
        per_client,
        ensemble,
        train_size: splits.iter().map(|(tr, _)| tr.len()).sum(),
        test_size: test.len(),
    };
    Ok(FoldOutcome { result, models })
}

fn ensemble_metrics(models: &[ParamVector], x: &[AlignedSample], model: &FusionConfig, test: &[Sample]) -> Result<Metrics> {
    let mut total: Vec<Vec<f64>> = vec![vec![0.0; model.classes]; x.len()];
    for m in models {
        for (acc, l) in total.iter_mut().zip(logits_all(m, x, model)?) {
            for (a, v) in acc.iter_mut().zip(l) {
                *a += v / models.len() as f64;
            }
        }
    }
    let preds = total
        .iter()
        .map(|l| Label::from_index(crate::model::argmax(l)))
        .collect::<Result<Vec<_>>>()?;
    compute_metrics(&preds, &labels(test))
}

/// Samples and converter for one run seed.
pub(crate) fn corpus_for_seed(cfg: &ExperimentConfig, seed: u64) -> Result<(Vec<Sample>, Option<SynthGenerator>)> {
    match &cfg.corpus {
        CorpusSource::Synthetic(c) => {
            let c = crate::augmentation::SynthCorpusConfig { seed: c.seed.wrapping_add(seed), ..*c };
            let (g, samples) = synth_generate(&c)?;
            Ok((samples, Some(g)))
        }
        CorpusSource::Path(p) => {
            if !p.join("manifest.json").exists() {
                return Err(invalid(format!("corpus {} not found", p.display())));
            }
            let c = load_corpus(p)?;
            Ok((c.samples, c.generator))
        }
    }
}

pub(crate) fn fold_seed(seed: u64) -> u64 {
    derive_seed(seed, &[FOLD_STREAM])
}

pub(crate) fn in_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| invalid(e.to_string()))?
            .install(f),
        None => f(),
    }
}

/// Cross-validated run of one configuration over all its seeds.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let start = Instant::now();
    let folds = in_pool(cfg.workers, || {
        let mut all = Vec::new();
        for &seed in &cfg.seeds {
            let (samples, generator) = corpus_for_seed(cfg, seed)?;
            let conv = generator.as_ref().map(|g| g as &dyn Converter);
            let splits = kfold_split(&labels(&samples), cfg.folds, fold_seed(seed))?;
            let results = splits
                .par_iter()
                .enumerate()
                .map(|(f, (tr, te))| train_fold(cfg, &pick(&samples, tr), &pick(&samples, te), conv, seed, f).map(|o| o.result))
                .collect::<Result<Vec<_>>>()?;
            all.extend(results);
        }
        Ok(all)
    })?;
    let per_seed = cfg
        .seeds
        .iter()
        .map(|&seed| {
            let mine: Vec<&FoldResult> = folds.iter().filter(|f| f.seed == seed).collect();
            SeedSummary {
                seed,
                metrics: mean_metrics(&mine.iter().map(|f| f.metrics).collect::<Vec<_>>()),
                ensemble: mine
                    .iter()
                    .map(|f| f.ensemble)
                    .collect::<Option<Vec<_>>>()
                    .map(|e| mean_metrics(&e)),
            }
        })
        .collect();
    let mean = mean_metrics(&folds.iter().map(|f| f.metrics).collect::<Vec<_>>());
    let mean_ensemble = folds.iter().map(|f| f.ensemble).collect::<Option<Vec<_>>>().map(|e| mean_metrics(&e));
    let federated = cfg.paradigm == Paradigm::Federated;
    Ok(RunReport {
        config_hash: cfg.hash()?,
        seeds: cfg.seeds.clone(),
        paradigm: cfg.paradigm,
        modality: cfg.modality,
        augment: cfg.augment,
        aggregator: federated.then(|| cfg.federation.aggregator.name().to_string()),
        strategy: federated.then(|| cfg.federation.strategy.name().to_string()),
        folds,
        per_seed,
        mean,
        mean_ensemble,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}
