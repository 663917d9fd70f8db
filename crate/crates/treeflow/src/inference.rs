//! Turning a trained sampler into predictors: posterior tree samples,
//! per-leaf Dirichlet posteriors, model-averaged prediction with
//! log-sum-exp-normalized weights, evaluation metrics, and the
//! out-of-distribution decision rule.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math::{mean_std, softmax_from_logs};
use crate::policy::PolicyModel;
use crate::reward::{log_reward, RewardParams};
use crate::tree::{leaf_counts, num_decision_nodes, route, TreeState};

/// How leaf class probabilities are derived from posterior counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafParamMode {
    /// Posterior mean (n_c + alpha_c) / (n + sum alpha); deterministic.
    Mean,
    /// One draw per leaf from Dirichlet(n + alpha).
    Sample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMember {
    pub tree: TreeState,
    pub log_posterior: f64,
    pub weight: f64,
    leaf_slots: Vec<usize>,
    leaf_params: Vec<Vec<f64>>,
}

impl EnsembleMember {
    /// Class probabilities of the leaf this member routes x to.
    pub fn leaf_probs(&self, x: &[f64]) -> &[f64] {
        let slot = route(&self.tree, x);
        let pos = self.leaf_slots.binary_search(&slot).expect("x routes to a leaf");
        &self.leaf_params[pos]
    }
}

/// Posterior-weighted collection of terminal trees. Weights are the softmax
/// of member log-posteriors (max-shifted, so huge spreads stay finite) and
/// sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: Vec<EnsembleMember>,
    num_classes: usize,
}

/// Evaluation summary; model_size counts decision plus leaf nodes, averaged
/// over ensemble members.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub f1: f64,
    pub model_size: f64,
}

/// m independent on-policy samples (exploration off); duplicates are
/// retained since repeats are posterior mass.
pub fn sample_trees<R: Rng>(
    model: &PolicyModel,
    data: &Dataset,
    m: usize,
    rng: &mut R,
) -> Result<Vec<TreeState>> {
    (0..m)
        .map(|_| model.sample_trajectory(data, 0.0, rng).map(|t| t.terminal().clone()))
        .collect()
}

/// Per-leaf class-probability vectors for a terminal tree, aligned with its
/// sorted leaf slots. The posterior per leaf is Dirichlet(counts + alpha).
pub fn leaf_posterior_params<R: Rng>(
    tree: &TreeState,
    data: &Dataset,
    alpha: &[f64],
    mode: LeafParamMode,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    debug_assert!(tree.is_terminal());
    debug_assert_eq!(alpha.len(), data.num_classes());
    let stats = leaf_counts(tree, data);
    let alpha_sum: f64 = alpha.iter().sum();
    (0..stats.num_leaves())
        .map(|l| match mode {
            LeafParamMode::Mean => {
                let total = stats.leaf_total(l) as f64 + alpha_sum;
                alpha
                    .iter()
                    .enumerate()
                    .map(|(c, &a)| (stats.count(l, c) as f64 + a) / total)
                    .collect()
            }
            LeafParamMode::Sample => {
                let draws: Vec<f64> = alpha
                    .iter()
                    .enumerate()
                    .map(|(c, &a)| {
                        let shape = stats.count(l, c) as f64 + a;
                        Gamma::new(shape, 1.0).expect("positive shape").sample(rng)
                    })
                    .collect();
                let total: f64 = draws.iter().sum();
                draws.iter().map(|&g| g / total).collect()
            }
        })
        .collect()
}

impl Ensemble {
    /// Score each tree at temperature 1 and assemble the weighted ensemble.
    pub fn build<R: Rng>(
        trees: &[TreeState],
        data: &Dataset,
        params: &RewardParams,
        mode: LeafParamMode,
        rng: &mut R,
    ) -> Result<Ensemble> {
        let unit = params.at_unit_temperature();
        let scored = trees
            .iter()
            .map(|t| (t.clone(), log_reward(t, data, &unit)))
            .collect();
        Ensemble::from_scored_trees(scored, data, &params.alpha, mode, rng)
    }

    /// Assemble from externally supplied log-posteriors (already at
    /// temperature 1).
    pub fn from_scored_trees<R: Rng>(
        scored: Vec<(TreeState, f64)>,
        data: &Dataset,
        alpha: &[f64],
        mode: LeafParamMode,
        rng: &mut R,
    ) -> Result<Ensemble> {
        if scored.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        let log_posteriors: Vec<f64> = scored.iter().map(|(_, lp)| *lp).collect();
        let weights = softmax_from_logs(&log_posteriors);
        let members = scored
            .into_iter()
            .zip(weights)
            .map(|((tree, log_posterior), weight)| {
                let leaf_slots = tree.frontier();
                let leaf_params = leaf_posterior_params(&tree, data, alpha, mode, rng);
                EnsembleMember { tree, log_posterior, weight, leaf_slots, leaf_params }
            })
            .collect();
        Ok(Ensemble { members, num_classes: data.num_classes() })
    }

    pub fn members(&self) -> &[EnsembleMember] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
}

/// Posterior-mixture prediction: weighted average of each member's leaf
/// class probabilities at x, then argmax (ties to the lowest class index).
pub fn bma_predict(e: &Ensemble, x: &[f64]) -> (usize, Vec<f64>) {
    let mut probs = vec![0.0; e.num_classes];
    for m in &e.members {
        for (p, v) in probs.iter_mut().zip(m.leaf_probs(x)) {
            *p += m.weight * v;
        }
    }
    let mut best = 0;
    for c in 1..probs.len() {
        if probs[c] > probs[best] {
            best = c;
        }
    }
    (best, probs)
}

/// Per-row probability mass the ensemble assigns to the designated normal
/// classes.
pub fn ood_scores(e: &Ensemble, test: &Dataset, normal_classes: &[usize]) -> Result<Vec<f64>> {
    if normal_classes.is_empty() || normal_classes.iter().any(|&c| c >= e.num_classes) {
        return Err(Error::BadParams("normal classes out of range"));
    }
    Ok((0..test.num_rows())
        .map(|i| {
            let (_, probs) = bma_predict(e, test.row(i));
            normal_classes.iter().map(|&c| probs[c]).sum()
        })
        .collect())
}

/// Flag a row anomalous iff its score is strictly below the mean minus two
/// population standard deviations of all scores.
pub fn ood_classify(scores: &[f64]) -> Result<Vec<bool>> {
    if scores.len() < 2 {
        return Err(Error::TooFewScores(scores.len()));
    }
    let (mean, std) = mean_std(scores);
    let cut = mean - 2.0 * std;
    Ok(scores.iter().map(|&s| s < cut).collect())
}

/// Accuracy, F1 (positive class 1 when binary, macro otherwise), and mean
/// member node count on a labeled test set.
pub fn evaluate(e: &Ensemble, test: &Dataset) -> Result<EvalReport> {
    if test.num_classes() != e.num_classes {
        return Err(Error::BadParams("class count mismatch between ensemble and test set"));
    }
    let preds: Vec<usize> = (0..test.num_rows()).map(|i| bma_predict(e, test.row(i)).0).collect();
    let correct = preds.iter().zip(test.labels()).filter(|(p, y)| p == y).count();
    let accuracy = correct as f64 / test.num_rows() as f64;
    let f1 = f1_score(test.labels(), &preds, test.num_classes());
    let model_size = e
        .members
        .iter()
        .map(|m| (2 * num_decision_nodes(&m.tree) + 1) as f64)
        .sum::<f64>()
        / e.members.len() as f64;
    Ok(EvalReport { accuracy, f1, model_size })
}

/// F1 with class 1 as the positive class for binary problems, macro-averaged
/// over the classes present in truth or predictions otherwise. A class with
/// no true or predicted instances carries no signal and is skipped; with no
/// signal anywhere the score is vacuously 1.
pub fn f1_score(truth: &[usize], preds: &[usize], num_classes: usize) -> f64 {
    debug_assert_eq!(truth.len(), preds.len());
    let per_class = |c: usize| -> Option<f64> {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fal_n = 0.0;
        for (&y, &p) in truth.iter().zip(preds) {
            match (y == c, p == c) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fal_n += 1.0,
                (false, false) => {}
            }
        }
        let denom = 2.0 * tp + fp + fal_n;
        if denom == 0.0 {
            None
        } else {
            Some(2.0 * tp / denom)
        }
    };
    if num_classes == 2 {
        return per_class(1).unwrap_or(1.0);
    }
    let scores: Vec<f64> = (0..num_classes).filter_map(per_class).collect();
    if scores.is_empty() {
        1.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

/// Highest-posterior sample at temperature 1; ties prefer fewer decision
/// nodes, then the smaller canonical key, so the winner is deterministic.
pub fn select_map_tree(
    samples: &[TreeState],
    data: &Dataset,
    params: &RewardParams,
) -> Result<TreeState> {
    if samples.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let unit = params.at_unit_temperature();
    let mut best: Option<(f64, usize, Vec<u64>, &TreeState)> = None;
    for tree in samples {
        let score = log_reward(tree, data, &unit);
        let nodes = num_decision_nodes(tree);
        let key = tree.canonical_key();
        let better = match &best {
            None => true,
            Some((bs, bn, bk, _)) => {
                score > *bs
                    || (score == *bs && (nodes < *bn || (nodes == *bn && key < *bk)))
            }
        };
        if better {
            best = Some((score, nodes, key, tree));
        }
    }
    Ok(best.expect("nonempty samples").3.clone())
}
