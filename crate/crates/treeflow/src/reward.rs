//! Exact Bayesian scoring of terminal trees: the per-leaf multinomial
//! likelihood, its Dirichlet-marginalized closed form, a description-length
//! structure prior, and an exact counter for the unconstrained search space.

use alloc::vec::Vec;

use num_bigint::BigUint;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math::{ln, log_gamma};
use crate::tree::{leaf_counts, num_decision_nodes, LeafStats, TreeState};

/// Dirichlet prior over leaf class probabilities, structure-prior
/// coefficient, and reward temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardParams {
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub temperature: f64,
}

impl RewardParams {
    pub fn new(alpha: Vec<f64>, beta: f64, temperature: f64) -> Result<Self> {
        if alpha.is_empty() || !alpha.iter().all(|&a| a.is_finite() && a > 0.0) {
            return Err(Error::BadParams("alpha entries must be positive"));
        }
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::BadParams("beta must be nonnegative"));
        }
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::BadParams("temperature must be positive"));
        }
        Ok(RewardParams { alpha, beta, temperature })
    }

    /// Reproduction defaults: alpha_c = 0.1 for every class, the
    /// feature-only coding-length coefficient, temperature 1.
    pub fn defaults(num_classes: usize, num_features: usize) -> Self {
        RewardParams {
            alpha: alloc::vec![0.1; num_classes],
            beta: beta_default(num_features),
            temperature: 1.0,
        }
    }

    /// Same params with temperature forced to 1 (posterior scale).
    pub fn at_unit_temperature(&self) -> RewardParams {
        RewardParams { temperature: 1.0, ..self.clone() }
    }
}

/// Sum over leaves and classes of n_{l,c} * ln(theta_{l,c}). A zero
/// probability with a positive count yields -inf, never a panic.
pub fn log_likelihood_given_theta(stats: &LeafStats, theta: &[Vec<f64>]) -> f64 {
    debug_assert_eq!(stats.num_leaves(), theta.len());
    let mut total = 0.0;
    for (l, leaf_theta) in theta.iter().enumerate() {
        for (c, &p) in leaf_theta.iter().enumerate() {
            let n = stats.count(l, c);
            if n == 0 {
                continue;
            }
            if p <= 0.0 {
                return f64::NEG_INFINITY;
            }
            total += (n as f64) * ln(p);
        }
    }
    total
}

/// Closed-form marginal of the likelihood under theta_l ~ Dirichlet(alpha),
/// i.i.d. per leaf:
///
/// |L| * [lnG(sum a) - sum_c lnG(a_c)]
///   + sum_l [sum_c lnG(n_{l,c} + a_c) - lnG(n_l + sum a)]
///
/// Leaves with zero counts contribute exactly zero.
pub fn log_marginal_likelihood(stats: &LeafStats, alpha: &[f64]) -> f64 {
    debug_assert_eq!(stats.num_classes(), alpha.len());
    let alpha_sum: f64 = alpha.iter().sum();
    let prior_norm: f64 =
        log_gamma(alpha_sum) - alpha.iter().map(|&a| log_gamma(a)).sum::<f64>();
    let mut total = (stats.num_leaves() as f64) * prior_norm;
    for l in 0..stats.num_leaves() {
        let mut leaf_total = 0u64;
        for (c, &a) in alpha.iter().enumerate() {
            let n = stats.count(l, c);
            leaf_total += n;
            total += log_gamma(n as f64 + a);
        }
        total -= log_gamma(leaf_total as f64 + alpha_sum);
    }
    total
}

/// Description-length structure prior: -beta * (number of decision nodes).
pub fn log_prior(tree: &TreeState, beta: f64) -> f64 {
    -beta * num_decision_nodes(tree) as f64
}

/// Unnormalized log posterior of a terminal tree, tempered:
/// [log marginal likelihood + log prior] / temperature.
pub fn log_reward(tree: &TreeState, data: &Dataset, params: &RewardParams) -> f64 {
    debug_assert!(tree.is_terminal(), "reward is defined on terminal trees");
    let stats = leaf_counts(tree, data);
    log_reward_from_stats(&stats, num_decision_nodes(tree), params)
}

/// Reward from precomputed (possibly streamed) leaf statistics.
pub fn log_reward_from_stats(
    stats: &LeafStats,
    num_decisions: usize,
    params: &RewardParams,
) -> f64 {
    let lml = log_marginal_likelihood(stats, &params.alpha);
    (lml - params.beta * num_decisions as f64) / params.temperature
}

/// Coding-length coefficient covering branching, feature choice, and
/// threshold choice: ln 4 + ln d + ln t.
pub fn beta_heuristic(num_features: usize, num_thresholds: usize) -> f64 {
    debug_assert!(num_features >= 1 && num_thresholds >= 1);
    ln(4.0) + ln(num_features as f64) + ln(num_thresholds as f64)
}

/// Reproduction-default coefficient without the threshold term: ln 4 + ln d.
pub fn beta_default(num_features: usize) -> f64 {
    debug_assert!(num_features >= 1);
    ln(4.0) + ln(num_features as f64)
}

/// Number of distinct full binary trees of depth exactly `depth` over `p`
/// binary features, features never reused along a path, computed exactly.
/// This counts the unconstrained space; the reachable set of the masked
/// construction process differs, so this is a diagnostic, never an
/// enumeration oracle.
pub fn count_trees_by_depth(p: usize, depth: usize) -> Result<Vec<BigUint>> {
    if depth == 0 {
        return Err(Error::BadParams("depth must be >= 1"));
    }
    if p < depth {
        return Err(Error::CountNeedsFeatures { features: p, depth });
    }
    let mut out = Vec::with_capacity(depth);
    for d_t in 1..=depth {
        out.push(count_exact_depth(p as u64, d_t as u64));
    }
    Ok(out)
}

/// Cumulative count over depths 1..=depth.
pub fn count_trees(p: usize, depth: usize) -> Result<BigUint> {
    Ok(count_trees_by_depth(p, depth)?.into_iter().sum())
}

fn count_exact_depth(p: u64, d_t: u64) -> BigUint {
    if d_t == 1 {
        return BigUint::from(p);
    }
    // extensions(level, m): ways to grow m nodes at `level` down to exactly
    // depth d_t, where nodes at level l+1 each pick one of (p - l) features.
    fn extensions(
        p: u64,
        d_t: u64,
        level: u64,
        m: u64,
        memo: &mut alloc::collections::BTreeMap<(u64, u64), BigUint>,
    ) -> BigUint {
        if let Some(v) = memo.get(&(level, m)) {
            return v.clone();
        }
        let mut total = BigUint::ZERO;
        for k in 1..=2 * m {
            let mut term = binomial(2 * m, k) * BigUint::from(p - level).pow(k as u32);
            if level + 1 < d_t {
                term *= extensions(p, d_t, level + 1, k, memo);
            }
            total += term;
        }
        memo.insert((level, m), total.clone());
        total
    }
    let mut memo = alloc::collections::BTreeMap::new();
    BigUint::from(p) * extensions(p, d_t, 1, 1, &mut memo)
}

fn binomial(n: u64, k: u64) -> BigUint {
    let k = k.min(n - k);
    let mut num = BigUint::from(1u32);
    let mut den = BigUint::from(1u32);
    for i in 0..k {
        num *= BigUint::from(n - i);
        den *= BigUint::from(i + 1);
    }
    num / den
}
