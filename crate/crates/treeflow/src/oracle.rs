//! Ground truth for small instances: exhaustive enumeration of the
//! mask-reachable tree space, the exact posterior and partition function
//! over it, and total-variation divergence of the learned sampler from that
//! truth. This is the primary correctness oracle for the whole system.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math::{log_sum_exp, softmax_from_logs};
use crate::policy::PolicyModel;
use crate::reward::{log_reward, RewardParams};
use crate::tree::{apply_action, empty_state, legal_action_mask, Action, TreeState};

/// Default bound on the enumerated space.
pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;

/// Exact posterior over every reachable terminal tree of a small instance.
#[derive(Debug, Clone)]
pub struct ExactPosterior {
    pub trees: Vec<TreeState>,
    pub log_rewards: Vec<f64>,
    pub log_partition: f64,
    pub probabilities: Vec<f64>,
}

/// Every terminal tree reachable from the empty state under the dataset's
/// legal-action masks, each exactly once, sorted by canonical key. Each
/// visited non-terminal state contributes exactly one terminal tree (its
/// termination), so the cap bounds both.
pub fn enumerate_trees(
    data: &Dataset,
    d_max: usize,
    num_thresholds: usize,
    cap: usize,
) -> Result<Vec<TreeState>> {
    let root = empty_state(d_max)?;
    let mut seen: BTreeSet<Vec<u64>> = BTreeSet::new();
    seen.insert(root.canonical_key());
    let mut stack = vec![root];
    let mut terminals = Vec::new();
    while let Some(s) = stack.pop() {
        if terminals.len() >= cap {
            return Err(Error::CapExceeded { cap, seen: terminals.len() + stack.len() + 1 });
        }
        terminals.push(apply_action(&s, &Action::Terminate)?);
        let mask = legal_action_mask(&s, data, num_thresholds)?;
        for action in mask.allowed_actions() {
            if matches!(action, Action::Terminate) {
                continue;
            }
            let next = apply_action(&s, &action)?;
            if seen.insert(next.canonical_key()) {
                stack.push(next);
            }
        }
    }
    terminals.sort_by_key(TreeState::canonical_key);
    Ok(terminals)
}

/// Score a duplicate-free tree list and normalize into a distribution.
pub fn exact_posterior(
    trees: &[TreeState],
    data: &Dataset,
    params: &RewardParams,
) -> Result<ExactPosterior> {
    if trees.is_empty() {
        return Err(Error::BadParams("no trees to score"));
    }
    let mut keys = BTreeSet::new();
    for t in trees {
        if !keys.insert(t.canonical_key()) {
            return Err(Error::BadParams("duplicate tree in exact posterior"));
        }
    }
    let log_rewards: Vec<f64> = trees.iter().map(|t| log_reward(t, data, params)).collect();
    let log_partition = log_sum_exp(&log_rewards);
    let probabilities = softmax_from_logs(&log_rewards);
    Ok(ExactPosterior { trees: trees.to_vec(), log_rewards, log_partition, probabilities })
}

fn tv_from_counts(counts: &[u64], probabilities: &[f64], num_samples: usize) -> f64 {
    debug_assert_eq!(counts.len(), probabilities.len());
    let n = num_samples as f64;
    let mut tv = 0.0;
    for (&c, &p) in counts.iter().zip(probabilities) {
        tv += (c as f64 / n - p).abs();
    }
    0.5 * tv
}

/// Draw num_samples exploration-free trees from the model and measure
/// (total variation against the exact posterior, |log_z - log partition|).
/// A sampled tree outside the enumerated support is a hard error: it means
/// the masks and the enumeration disagree.
pub fn sampler_divergence<R: Rng>(
    model: &PolicyModel,
    data: &Dataset,
    exact: &ExactPosterior,
    num_samples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if num_samples == 0 {
        return Err(Error::BadParams("divergence needs at least one sample"));
    }
    let index: BTreeMap<Vec<u64>, usize> = exact
        .trees
        .iter()
        .enumerate()
        .map(|(i, t)| (t.canonical_key(), i))
        .collect();
    let mut counts = vec![0u64; exact.trees.len()];
    for _ in 0..num_samples {
        let traj = model.sample_trajectory(data, 0.0, rng)?;
        match index.get(&traj.terminal().canonical_key()) {
            Some(&i) => counts[i] += 1,
            None => return Err(Error::OutOfSupport),
        }
    }
    let tv = tv_from_counts(&counts, &exact.probabilities, num_samples);
    let log_z_gap = (model.log_z - exact.log_partition).abs();
    Ok((tv, log_z_gap))
}
