use std::collections::{BTreeMap, HashSet};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ObservedItems;
use crate::model::{MatrixFactorization, Recommender};

use super::EvalError;

/// Anything that can score a `(user, item)` pair.
pub trait Scorer: Sync {
    fn score(&self, user: usize, item: usize) -> f64;
}

impl Scorer for Recommender {
    fn score(&self, user: usize, item: usize) -> f64 {
        self.score_combined(user, item)
    }
}

impl Scorer for MatrixFactorization {
    fn score(&self, user: usize, item: usize) -> f64 {
        MatrixFactorization::score(self, user, item)
    }
}

impl<F: Fn(usize, usize) -> f64 + Sync> Scorer for F {
    fn score(&self, user: usize, item: usize) -> f64 {
        self(user, item)
    }
}

/// Metric contributions of one ranked positive.
#[derive(Clone, Debug, PartialEq)]
pub struct RankOutcome {
    /// 1-based; every negative scoring at least as high counts against.
    pub rank: usize,
    pub hr: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub mrr: f64,
}

pub fn rank_metrics(
    positive: f64,
    negatives: &[f64],
    ks: &[usize],
) -> Result<RankOutcome, EvalError> {
    if negatives.is_empty() {
        return Err(EvalError::NoNegatives);
    }
    let rank = 1 + negatives.iter().filter(|&&n| n >= positive).count();
    let hit = |k: usize| rank <= k;
    Ok(RankOutcome {
        rank,
        hr: ks.iter().map(|&k| if hit(k) { 1.0 } else { 0.0 }).collect(),
        ndcg: ks
            .iter()
            .map(|&k| {
                if hit(k) {
                    1.0 / ((rank + 1) as f64).log2()
                } else {
                    0.0
                }
            })
            .collect(),
        mrr: 1.0 / rank as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub negatives: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: vec![1, 5, 10],
            negatives: 99,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `HR@K`, `NDCG@K` for every K, and `MRR`.
    pub metrics: BTreeMap<String, f64>,
    pub n_evaluated: usize,
    /// Cases dropped because the user had no unobserved item left.
    #[serde(default)]
    pub n_skipped: usize,
    pub seed: u64,
    pub negatives_per_positive: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl EvalReport {
    pub fn get(&self, metric: &str) -> f64 {
        self.metrics.get(metric).copied().unwrap_or(f64::NAN)
    }

    pub fn hr(&self, k: usize) -> f64 {
        self.get(&format!("HR@{k}"))
    }

    pub fn ndcg(&self, k: usize) -> f64 {
        self.get(&format!("NDCG@{k}"))
    }

    pub fn mrr(&self) -> f64 {
        self.get("MRR")
    }
}

fn interaction_seed(seed: u64, index: usize) -> u64 {
    crate::model::mix_seed(seed, index as u64 + 1)
}

/// Up to `count` distinct items outside `observed`, drawn uniformly.
pub fn sample_negatives<R: Rng + ?Sized>(
    observed: &[usize],
    num_items: usize,
    count: usize,
    rng: &mut R,
) -> Vec<usize> {
    let available = num_items.saturating_sub(observed.len());
    if available == 0 {
        return Vec::new();
    }
    let want = count.min(available);
    if want * 2 <= available {
        let mut chosen = HashSet::with_capacity(want);
        let mut out = Vec::with_capacity(want);
        while out.len() < want {
            let i = rng.random_range(0..num_items);
            if observed.binary_search(&i).is_err() && chosen.insert(i) {
                out.push(i);
            }
        }
        out
    } else {
        let pool: Vec<usize> = (0..num_items)
            .filter(|i| observed.binary_search(i).is_err())
            .collect();
        index::sample(rng, pool.len(), want)
            .into_iter()
            .map(|j| pool[j])
            .collect()
    }
}

/// Ranks each `(user, item)` case against sampled negatives the user never
/// interacted with according to `history`, and averages the contributions.
pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    cases: &[(usize, usize)],
    history: &ObservedItems,
    num_items: usize,
    config: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let ranked: Vec<Option<RankOutcome>> = cases
        .par_iter()
        .enumerate()
        .map(|(idx, &(user, item))| {
            let mut rng = ChaCha8Rng::seed_from_u64(interaction_seed(config.seed, idx));
            let negs = sample_negatives(history.items(user), num_items, config.negatives, &mut rng);
            if negs.is_empty() {
                return Ok(None);
            }
            let scores: Vec<f64> = negs.iter().map(|&j| scorer.score(user, j)).collect();
            rank_metrics(scorer.score(user, item), &scores, &config.ks).map(Some)
        })
        .collect::<Result<_, _>>()?;
    let outcomes: Vec<RankOutcome> = ranked.into_iter().flatten().collect();
    let skipped = cases.len() - outcomes.len();
    if outcomes.is_empty() {
        return Err(EvalError::NoNegatives);
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} cases whose user has interacted with every item");
    }
    let short = cases
        .iter()
        .filter(|&&(u, _)| num_items - history.items(u).len() < config.negatives)
        .count();
    if short > 0 {
        log::warn!(
            "{short} cases had fewer than {} candidate negatives",
            config.negatives
        );
    }

    let n = outcomes.len() as f64;
    let mut hr = vec![0.0; config.ks.len()];
    let mut ndcg = vec![0.0; config.ks.len()];
    let mut mrr = 0.0;
    for o in &outcomes {
        for j in 0..config.ks.len() {
            hr[j] += o.hr[j];
            ndcg[j] += o.ndcg[j];
        }
        mrr += o.mrr;
    }
    let mut metrics = BTreeMap::new();
    for (j, k) in config.ks.iter().enumerate() {
        metrics.insert(format!("HR@{k}"), hr[j] / n);
        metrics.insert(format!("NDCG@{k}"), ndcg[j] / n);
    }
    metrics.insert("MRR".to_string(), mrr / n);
    Ok(EvalReport {
        metrics,
        n_evaluated: outcomes.len(),
        n_skipped: skipped,
        seed: config.seed,
        negatives_per_positive: config.negatives,
        config_hash: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_examples() {
        let top = rank_metrics(1.0, &[0.0, 0.5], &[1, 5]).unwrap();
        assert_eq!(
            (top.rank, top.hr[0], top.ndcg[1], top.mrr),
            (1, 1.0, 1.0, 1.0)
        );

        let third = rank_metrics(0.5, &[0.9, 0.8, 0.1], &[5]).unwrap();
        assert_eq!(third.rank, 3);
        assert!((third.ndcg[0] - 0.5).abs() < 1e-15);
        assert!((third.mrr - 1.0 / 3.0).abs() < 1e-15);

        let sixth = rank_metrics(0.0, &[1.0; 5], &[5]).unwrap();
        assert_eq!((sixth.rank, sixth.hr[0], sixth.ndcg[0]), (6, 0.0, 0.0));
        assert!((sixth.mrr - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn ties_count_against_the_positive() {
        let r = rank_metrics(0.0, &[0.0; 99], &[1, 5]).unwrap();
        assert_eq!(r.rank, 100);
        assert_eq!(r.hr, vec![0.0, 0.0]);
        assert!(rank_metrics(0.0, &[], &[1]).is_err());
    }

    #[test]
    fn negatives_avoid_history_and_repeat_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let observed = vec![1, 3, 5];
        for n in [10, 1000] {
            let negs = sample_negatives(&observed, n, 6, &mut rng);
            assert_eq!(negs.len(), 6);
            let set: HashSet<_> = negs.iter().collect();
            assert_eq!(set.len(), 6);
            assert!(negs.iter().all(|i| !observed.contains(i) && *i < n));
        }
        assert_eq!(sample_negatives(&observed, 5, 6, &mut rng).len(), 2);
    }

    #[test]
    fn oracle_and_constant_scorers() {
        let cases: Vec<_> = (0..20).map(|u| (u, u % 7)).collect();
        let history = ObservedItems::from_pairs(20, cases.iter().copied());
        let cfg = EvalConfig {
            ks: vec![1, 5],
            negatives: 99,
            seed: 1,
        };
        let oracle = |u: usize, i: usize| if i == u % 7 { 1.0 } else { 0.0 };
        let r = evaluate(&oracle, &cases, &history, 300, &cfg).unwrap();
        assert!(r.metrics.values().all(|&v| v == 1.0));
        let constant = |_: usize, _: usize| 0.5;
        let r = evaluate(&constant, &cases, &history, 300, &cfg).unwrap();
        assert_eq!(r.hr(1), 0.0);
        assert_eq!(r.hr(5), 0.0);
        assert!(evaluate(&constant, &[], &history, 300, &cfg).is_err());
    }
}
