use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::run::{corpus_for_seed, fold_seed, in_pool, train_fold};
use super::{kfold_split, ExperimentConfig};
use crate::augmentation::{Converter, Sample};
use crate::error::{invalid, Error, Result};
use crate::federation::{stratified_split, Aggregator, Strategy};
use crate::training::derive_seed;

const INNER_STREAM: u64 = 0x494e_4e52;

/// Score to maximize for one grid point.
pub type Objective<'a> = &'a (dyn Fn(&ExperimentConfig) -> Result<f64> + Sync);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub index: usize,
    pub point: BTreeMap<String, f64>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
    pub best_index: usize,
}

impl GridReport {
    pub fn best(&self) -> &GridRow {
        &self.rows[self.best_index]
    }
}

fn as_count(key: &str, v: f64) -> Result<usize> {
    if v < 0.0 || v.fract() != 0.0 {
        return Err(Error::InvalidConfig(format!("{key} must be a non-negative integer, got {v}")));
    }
    Ok(v as usize)
}

/// Set one named hyperparameter on a config.
pub fn apply_point(cfg: &mut ExperimentConfig, key: &str, value: f64) -> Result<()> {
    let fed = &mut cfg.federation;
    match key {
        "lr" => fed.optimizer = fed.optimizer.with_lr(value),
        "weight_decay" => match &mut fed.optimizer {
            crate::training::LocalOptimizer::AdamW(c) => c.weight_decay = value,
            _ => return Err(Error::InvalidConfig("weight_decay needs the AdamW optimizer".into())),
        },
        "mu" => fed.aggregator = Aggregator::FedProx { mu: value },
        "batch_size" => fed.batch_size = Some(as_count(key, value)?),
        "local_epochs" => fed.local_epochs = as_count(key, value)?,
        "rounds" => fed.rounds = as_count(key, value)?,
        "clients" => fed.clients = as_count(key, value)?,
        "server_eta" => fed.server.eta = value,
        "server_tau" => fed.server.tau = value,
        "fine_tune_epochs" => fed.strategy = Strategy::Pfl { fine_tune_epochs: as_count(key, value)? },
        "mlp_hidden" => cfg.model.mlp_hidden = as_count(key, value)?,
        other => return Err(Error::InvalidConfig(format!("unknown grid parameter {other:?}"))),
    }
    Ok(())
}

fn cartesian(space: &BTreeMap<String, Vec<f64>>) -> Vec<BTreeMap<String, f64>> {
    let mut points = vec![BTreeMap::new()];
    for (k, values) in space {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.insert(k.clone(), v);
                    q
                })
            })
            .collect();
    }
    points
}

/// Mean inner-validation accuracy: each outer training split is split again
/// and the paradigm is trained and scored on that inner pair. Outer test
/// folds are never read.
pub fn inner_validation_score(cfg: &ExperimentConfig) -> Result<f64> {
    cfg.validate()?;
    let mut scores = Vec::new();
    for &seed in &cfg.seeds {
        let (samples, generator) = corpus_for_seed(cfg, seed)?;
        let conv = generator.as_ref().map(|g| g as &dyn Converter);
        let labels: Vec<_> = samples.iter().map(|s| s.label).collect();
        let outer = kfold_split(&labels, cfg.folds, fold_seed(seed))?;
        let fold_scores = outer
            .par_iter()
            .enumerate()
            .map(|(f, (train, _test))| {
                let train: Vec<Sample> = train.iter().map(|&i| samples[i].clone()).collect();
                let tl: Vec<_> = train.iter().map(|s| s.label).collect();
                let (itr, iva) = stratified_split(&tl, 0.2, derive_seed(seed, &[INNER_STREAM, f as u64]))?;
                let pick = |idx: &[usize]| idx.iter().map(|&i| train[i].clone()).collect::<Vec<_>>();
                train_fold(cfg, &pick(&itr), &pick(&iva), conv, seed, f).map(|o| o.result.metrics.accuracy)
            })
            .collect::<Result<Vec<_>>>()?;
        scores.extend(fold_scores);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Exhaustive search over the Cartesian product of `space`.
///
/// The winner has the highest score; ties go to the smaller learning rate,
/// then to the earlier grid index. Without an explicit objective every point
/// is scored by [`inner_validation_score`].
pub fn grid_search(
    cfg: &ExperimentConfig,
    space: &BTreeMap<String, Vec<f64>>,
    objective: Option<Objective>,
) -> Result<(ExperimentConfig, GridReport)> {
    if space.is_empty() || space.values().any(Vec::is_empty) {
        return Err(invalid("grid search space is empty"));
    }
    let points = cartesian(space);
    let configs = points
        .iter()
        .map(|p| {
            let mut c = cfg.clone();
            for (k, &v) in p {
                apply_point(&mut c, k, v)?;
            }
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let scores = in_pool(cfg.workers, || {
        configs
            .par_iter()
            .map(|c| match objective {
                Some(f) => f(c),
                None => inner_validation_score(c),
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    let rows: Vec<GridRow> = points
        .into_iter()
        .zip(scores)
        .enumerate()
        .map(|(index, (point, score))| GridRow { index, point, score })
        .collect();
    let lr = |r: &GridRow| r.point.get("lr").copied().unwrap_or(0.0);
    let mut best = 0;
    for (i, r) in rows.iter().enumerate().skip(1) {
        let b = &rows[best];
        if r.score > b.score || (r.score == b.score && lr(r) < lr(b)) {
            best = i;
        }
    }
    let chosen = configs[best].clone();
    Ok((chosen, GridReport { rows, best_index: best }))
}
