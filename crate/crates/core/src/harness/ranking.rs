//! Bootstrap ranking stability: resample test cases with replacement, rank
//! models by mean score (descending, ties share the average rank) and
//! report each model's empirical rank distribution.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};

pub const DEFAULT_BOOTSTRAP: usize = 1000;
/// Exhaustive enumeration visits n^n resamples; refuse beyond this.
pub const MAX_EXHAUSTIVE_RESAMPLES: u64 = 1 << 24;

/// Per-sample scores of each model on one task, aligned by sample index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScores {
    pub task: String,
    pub scores: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    Bootstrap { n_bootstrap: usize, seed: u64 },
    /// Every ordered resample of the n cases, each weighted 1/n^n.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankMass {
    pub rank: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRanking {
    pub task: String,
    /// Rank distribution per model, ranks ascending.
    pub distribution: BTreeMap<String, Vec<RankMass>>,
}

impl TaskRanking {
    pub fn probability(&self, model: &str, rank: f64) -> f64 {
        self.distribution
            .get(model)
            .and_then(|d| d.iter().find(|m| m.rank == rank))
            .map_or(0.0, |m| m.probability)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingStabilityResult {
    pub resampling: Resampling,
    pub tasks: Vec<TaskRanking>,
}

/// Ranks of `means` (higher is better); tied values share the average rank.
pub fn average_ranks(means: &[f64]) -> Vec<f64> {
    means
        .iter()
        .map(|m| {
            let above = means.iter().filter(|o| *o > m).count();
            let tied = means.iter().filter(|o| *o == m).count();
            above as f64 + (tied as f64 + 1.0) / 2.0
        })
        .collect()
}

/// Ranks are halves, so twice the rank is an exact integer key.
fn rank_key(r: f64) -> u64 {
    (2.0 * r).round() as u64
}

struct Accumulator {
    counts: Vec<BTreeMap<u64, u64>>,
    total: u64,
}

impl Accumulator {
    fn new(models: usize) -> Self {
        Accumulator { counts: vec![BTreeMap::new(); models], total: 0 }
    }

    fn add(&mut self, columns: &[&Vec<f64>], idx: &[usize]) {
        let means: Vec<f64> =
            columns.iter().map(|c| idx.iter().map(|&i| c[i]).sum::<f64>() / idx.len() as f64).collect();
        for (m, r) in average_ranks(&means).into_iter().enumerate() {
            *self.counts[m].entry(rank_key(r)).or_default() += 1;
        }
        self.total += 1;
    }
}

fn rank_task(task: &TaskScores, resampling: Resampling) -> Result<TaskRanking> {
    if task.scores.len() < 2 {
        return Err(HarnessError::Ranking(format!("task {} needs at least 2 models", task.task)));
    }
    let columns: Vec<&Vec<f64>> = task.scores.values().collect();
    let n = columns[0].len();
    if n == 0 || columns.iter().any(|c| c.len() != n) {
        return Err(HarnessError::Ranking(format!("task {}: models must share a non-empty sample set", task.task)));
    }
    if columns.iter().flat_map(|c| c.iter()).any(|v| !v.is_finite()) {
        return Err(HarnessError::Ranking(format!("task {}: non-finite score", task.task)));
    }
    let mut acc = Accumulator::new(columns.len());
    let mut idx = vec![0usize; n];
    match resampling {
        Resampling::Bootstrap { n_bootstrap, seed } => {
            if n_bootstrap == 0 {
                return Err(HarnessError::Ranking("n_bootstrap must be > 0".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..n_bootstrap {
                idx.iter_mut().for_each(|i| *i = rng.random_range(0..n));
                acc.add(&columns, &idx);
            }
        }
        Resampling::Exhaustive => {
            let total = (n as u64).checked_pow(n as u32).filter(|t| *t <= MAX_EXHAUSTIVE_RESAMPLES);
            if total.is_none() {
                return Err(HarnessError::Ranking(format!("{n}^{n} resamples is too many to enumerate")));
            }
            loop {
                acc.add(&columns, &idx);
                let mut k = 0;
                while k < n {
                    idx[k] += 1;
                    if idx[k] < n {
                        break;
                    }
                    idx[k] = 0;
                    k += 1;
                }
                if k == n {
                    break;
                }
            }
        }
    }
    let distribution = task
        .scores
        .keys()
        .zip(&acc.counts)
        .map(|(name, c)| {
            let masses = c
                .iter()
                .map(|(k, v)| RankMass { rank: *k as f64 / 2.0, probability: *v as f64 / acc.total as f64 })
                .collect();
            (name.clone(), masses)
        })
        .collect();
    Ok(TaskRanking { task: task.task.clone(), distribution })
}

/// Rank distributions for every task; deterministic for a given seed.
pub fn ranking_stability(tasks: &[TaskScores], resampling: Resampling) -> Result<RankingStabilityResult> {
    let tasks = tasks.iter().map(|t| rank_task(t, resampling)).collect::<Result<_>>()?;
    Ok(RankingStabilityResult { resampling, tasks })
}
