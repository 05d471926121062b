use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use super::PartitionScheme;
use crate::error::{invalid, Result};
use crate::label::Label;

const MAX_DIRICHLET_ATTEMPTS: usize = 1000;

/// Split sample indices into `m` disjoint, exhaustive shards.
///
/// Uniform shards differ in size by at most one. Dirichlet shards are
/// redrawn until every client holds at least two samples (one when the
/// dataset is too small for that).
pub fn partition(labels: &[Label], scheme: PartitionScheme, m: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let n = labels.len();
    if m == 0 {
        return Err(invalid("partition needs at least one client"));
    }
    if n < m {
        return Err(invalid(format!("dataset of {n} samples is smaller than {m} clients")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match scheme {
        PartitionScheme::Uniform => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let (base, extra) = (n / m, n % m);
            let mut shards = Vec::with_capacity(m);
            let mut start = 0;
            for c in 0..m {
                let len = base + usize::from(c < extra);
                let mut shard = order[start..start + len].to_vec();
                shard.sort_unstable();
                shards.push(shard);
                start += len;
            }
            Ok(shards)
        }
        PartitionScheme::Dirichlet { alpha } => {
            if !(alpha > 0.0) {
                return Err(invalid("dirichlet alpha must be > 0"));
            }
            let gamma = Gamma::new(alpha, 1.0).map_err(|e| invalid(e.to_string()))?;
            let min_size = if n >= 2 * m { 2 } else { 1 };
            let by_class: Vec<Vec<usize>> = Label::ALL
                .iter()
                .map(|&c| (0..n).filter(|&i| labels[i] == c).collect())
                .collect();
            for _ in 0..MAX_DIRICHLET_ATTEMPTS {
                let mut shards = vec![Vec::new(); m];
                for class in &by_class {
                    let mut idx = class.clone();
                    idx.shuffle(&mut rng);
                    let draws: Vec<f64> = (0..m).map(|_| gamma.sample(&mut rng)).collect();
                    let total: f64 = draws.iter().sum();
                    let mut cum = 0.0;
                    let mut start = 0;
                    for (c, d) in draws.iter().enumerate() {
                        cum += d;
                        let end = if c + 1 == m || total <= 0.0 {
                            idx.len()
                        } else {
                            ((cum / total) * idx.len() as f64).floor() as usize
                        }
                        .clamp(start, idx.len());
                        shards[c].extend_from_slice(&idx[start..end]);
                        start = end;
                    }
                }
                if shards.iter().all(|s| s.len() >= min_size) {
                    for s in &mut shards {
                        s.sort_unstable();
                    }
                    return Ok(shards);
                }
            }
            Err(invalid("dirichlet partition could not give every client enough samples"))
        }
    }
}

/// Stratified split of indices into (train, val).
///
/// Each class contributes `round(n_class * fraction)` validation samples. A
/// set of two or more samples always keeps at least one of each side.
pub fn stratified_split(labels: &[Label], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(invalid("validation fraction must lie in [0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut pools: Vec<Vec<usize>> = Vec::new();
    for class in Label::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let k = (idx.len() as f64 * fraction).round() as usize;
        val.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
        pools.push(idx);
    }
    if fraction > 0.0 && labels.len() >= 2 {
        if val.is_empty() {
            // Move one sample from the largest class.
            let pool = pools.iter().max_by_key(|p| p.len()).expect("two classes");
            let moved = pool[0];
            train.retain(|&i| i != moved);
            val.push(moved);
        } else if train.is_empty() {
            train.push(val.pop().expect("non-empty"));
        }
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}
