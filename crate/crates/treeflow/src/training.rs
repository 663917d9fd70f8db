//! Trajectory-balance optimization: mixed on-policy and replay batches,
//! linearly annealed exploration, a top-K replay buffer keyed by canonical
//! tree identity, and an adaptive-moment update on the flat parameter
//! vector. One seed pins the entire run.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math::sqrt;
use crate::policy::{sample_backward_trajectory, tb_loss_and_gradients, PolicyModel, Trajectory};
use crate::reward::{log_reward, RewardParams};
use crate::tree::TreeState;

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_forward: usize,
    pub batch_replay: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub buffer_capacity: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Reproduction defaults: 100 steps at lr 0.01, batches of 90 on-policy
    /// plus 10 replayed trajectories, exploration annealed 0.1 to 0.01,
    /// buffer capacity 100.
    fn default() -> Self {
        TrainConfig {
            steps: 100,
            lr: 0.01,
            batch_forward: 90,
            batch_replay: 10,
            epsilon_start: 0.1,
            epsilon_end: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            buffer_capacity: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_forward + self.batch_replay == 0 {
            return Err(Error::BadConfig("batch size is zero"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::BadConfig("lr must be a nonnegative real"));
        }
        let eps_ok = (0.0..=1.0).contains(&self.epsilon_start)
            && (0.0..=1.0).contains(&self.epsilon_end)
            && self.epsilon_end <= self.epsilon_start;
        if !eps_ok {
            return Err(Error::BadConfig("epsilon schedule must descend within [0,1]"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::BadConfig("moment constants must lie in [0,1)"));
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(Error::BadConfig("optimizer epsilon must be positive"));
        }
        if self.buffer_capacity == 0 {
            return Err(Error::BadConfig("buffer capacity is zero"));
        }
        Ok(())
    }
}

/// Scalar trajectory-balance loss (log_z + log_pf - log_pb - log_reward)^2.
pub fn tb_loss(log_z: f64, log_pf: f64, log_pb: f64, log_reward: f64) -> Result<f64> {
    for (v, name) in [
        (log_z, "log_z"),
        (log_pf, "log_pf"),
        (log_pb, "log_pb"),
        (log_reward, "log_reward"),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(name));
        }
    }
    let delta = log_z + log_pf - log_pb - log_reward;
    Ok(delta * delta)
}

/// Linear interpolation from epsilon_start at step 0 to epsilon_end at
/// cfg.steps.
pub fn epsilon_at(step: usize, cfg: &TrainConfig) -> f64 {
    if cfg.steps == 0 {
        return cfg.epsilon_end;
    }
    let frac = (step.min(cfg.steps) as f64) / cfg.steps as f64;
    cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac
}

/// Keeps the K highest-reward terminal trees seen so far, deduplicated by
/// canonical identity; the minimum-reward entry is evicted on overflow.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: BTreeMap<Vec<u64>, (TreeState, f64)>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<ReplayBuffer> {
        if capacity == 0 {
            return Err(Error::BadConfig("buffer capacity is zero"));
        }
        Ok(ReplayBuffer { capacity, entries: BTreeMap::new() })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, tree: &TreeState, log_reward: f64) {
        debug_assert!(tree.is_terminal());
        let key = tree.canonical_key();
        if self.entries.contains_key(&key) {
            return;
        }
        self.entries.insert(key, (tree.clone(), log_reward));
        if self.entries.len() > self.capacity {
            let evict = self
                .entries
                .iter()
                .min_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).expect("finite rewards"))
                .map(|(k, _)| k.clone())
                .expect("nonempty buffer");
            self.entries.remove(&evict);
        }
    }

    pub fn min_log_reward(&self) -> Option<f64> {
        self.entries.values().map(|(_, r)| *r).reduce(f64::min)
    }

    pub fn max_log_reward(&self) -> Option<f64> {
        self.entries.values().map(|(_, r)| *r).reduce(f64::max)
    }

    /// Uniform draw with replacement.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Option<(&TreeState, f64)> {
        if self.entries.is_empty() {
            return None;
        }
        let idx = rng.random_range(0..self.entries.len());
        self.entries.values().nth(idx).map(|(t, r)| (t, *r))
    }
}

/// First-order adaptive-moment optimizer state over the flat parameter
/// vector.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize) -> Adam {
        Adam { m: vec![0.0; num_params], v: vec![0.0; num_params], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], cfg: &TrainConfig) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - crate::math::powi(cfg.beta1, self.t as i32);
        let bc2 = 1.0 - crate::math::powi(cfg.beta2, self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= cfg.lr * m_hat / (sqrt(v_hat) + cfg.adam_eps);
        }
    }
}

/// Per-step training telemetry; buffer bounds are NaN while the buffer is
/// empty.
#[derive(Debug, Clone, Copy)]
pub struct StepMetrics {
    pub step: usize,
    pub mean_loss: f64,
    pub log_z: f64,
    pub epsilon: f64,
    pub buffer_min: f64,
    pub buffer_max: f64,
    pub num_trajectories: usize,
}

/// Memoized log rewards keyed by canonical tree identity; the posterior is
/// deterministic given the dataset, so one evaluation per tree suffices.
pub type RewardCache = BTreeMap<Vec<u64>, f64>;

pub fn cached_log_reward(
    cache: &mut RewardCache,
    tree: &TreeState,
    data: &Dataset,
    params: &RewardParams,
) -> f64 {
    let key = tree.canonical_key();
    if let Some(&r) = cache.get(&key) {
        return r;
    }
    let r = log_reward(tree, data, params);
    cache.insert(key, r);
    r
}

/// One optimization step: sample batch_forward on-policy trajectories at the
/// annealed epsilon, replay batch_replay buffer trees backward (skipped
/// while the buffer holds fewer than batch_replay trees), take one Adam step
/// on the mean TB loss, then insert the freshly sampled trees.
#[allow(clippy::too_many_arguments)]
pub fn train_step<R: Rng>(
    model: &mut PolicyModel,
    data: &Dataset,
    params: &RewardParams,
    buf: &mut ReplayBuffer,
    opt: &mut Adam,
    cache: &mut RewardCache,
    cfg: &TrainConfig,
    step: usize,
    rng: &mut R,
) -> Result<StepMetrics> {
    let epsilon = epsilon_at(step, cfg);
    let mut batch: Vec<(Trajectory, f64)> =
        Vec::with_capacity(cfg.batch_forward + cfg.batch_replay);
    let mut fresh: Vec<(TreeState, f64)> = Vec::with_capacity(cfg.batch_forward);
    for _ in 0..cfg.batch_forward {
        let traj = model.sample_trajectory(data, epsilon, rng)?;
        let log_r = cached_log_reward(cache, traj.terminal(), data, params);
        fresh.push((traj.terminal().clone(), log_r));
        batch.push((traj, log_r));
    }
    if cfg.batch_replay > 0 && buf.len() >= cfg.batch_replay {
        for _ in 0..cfg.batch_replay {
            let (tree, log_r) = buf.sample(rng).expect("buffer checked nonempty");
            let traj = sample_backward_trajectory(tree, rng);
            batch.push((traj, log_r));
        }
    }

    let (mean_loss, grads) = tb_loss_and_gradients(model, data, &batch)?;
    let mut flat = model.flatten_params();
    opt.step(&mut flat, &grads.flatten(), cfg);
    model.set_from_flat(&flat)?;

    for (tree, log_r) in fresh {
        buf.insert(&tree, log_r);
    }
    Ok(StepMetrics {
        step,
        mean_loss,
        log_z: model.log_z,
        epsilon,
        buffer_min: buf.min_log_reward().unwrap_or(f64::NAN),
        buffer_max: buf.max_log_reward().unwrap_or(f64::NAN),
        num_trajectories: batch.len(),
    })
}

/// Full training run from the config's seed; returns the per-step metrics
/// series.
pub fn train(
    model: &mut PolicyModel,
    data: &Dataset,
    params: &RewardParams,
    cfg: &TrainConfig,
) -> Result<Vec<StepMetrics>> {
    cfg.validate()?;
    let mut buf = ReplayBuffer::new(cfg.buffer_capacity)?;
    let mut opt = Adam::new(model.num_params());
    let mut cache = RewardCache::new();
    let mut rng = crate::seeded_rng(cfg.seed);
    let mut out = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        out.push(train_step(model, data, params, &mut buf, &mut opt, &mut cache, cfg, step, &mut rng)?);
    }
    Ok(out)
}
