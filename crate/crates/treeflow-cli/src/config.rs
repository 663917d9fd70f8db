//! Run configuration: one JSON file drives a whole experiment. Unknown keys
//! are rejected so a typo cannot silently fall back to a default. The config
//! hash is embedded in every artifact; eval refuses artifacts whose hash does
//! not match the config it was given.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use treeflow::training::TrainConfig;
use treeflow::{Dataset, PolicyConfig, RewardParams};

use crate::errors::{usage, CliResult};

/// Environment variable naming the root directory that relative output
/// paths are resolved against.
pub const OUT_ROOT_ENV: &str = "TREEFLOW_OUT";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Domain-shift protocol; when set, the split is (train, id test, ood
    /// test) by a raw-unit threshold instead of a plain shuffle.
    #[serde(default)]
    pub shift: Option<ShiftConfig>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_d_max")]
    pub d_max: usize,
    #[serde(default = "default_num_thresholds")]
    pub num_thresholds: usize,
    #[serde(default = "default_hidden_layers")]
    pub hidden_layers: usize,
    #[serde(default = "default_hidden_units")]
    pub hidden_units: usize,
    /// Dirichlet prior weight per class.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Structure-prior coefficient; null means log 4 + log d at runtime.
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch_forward")]
    pub batch_forward: usize,
    #[serde(default = "default_batch_replay")]
    pub batch_replay: usize,
    #[serde(default = "default_epsilon_start")]
    pub epsilon_start: f64,
    #[serde(default = "default_epsilon_end")]
    pub epsilon_end: f64,
    #[serde(default = "default_buffer_capacity")]
    pub buffer_capacity: usize,
    /// Trees sampled at inference time.
    #[serde(default = "default_ensemble_size")]
    pub ensemble_size: usize,
    pub output_dir: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Csv {
        path: String,
        label_column: String,
        #[serde(default)]
        categorical_columns: Vec<String>,
    },
    Xor {
        n: usize,
        num_noise: usize,
        noise: NoiseSpec,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSpec {
    Binary,
    Real,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftConfig {
    /// Feature name (after one-hot expansion for categorical columns).
    pub feature: String,
    /// Threshold in raw data units; scaling happens after the partition.
    pub threshold: f64,
    #[serde(default = "default_true")]
    pub train_below: bool,
    #[serde(default = "default_id_test_fraction")]
    pub id_test_fraction: f64,
}

fn default_train_fraction() -> f64 {
    0.8
}
fn default_seeds() -> Vec<u64> {
    vec![1]
}
fn default_d_max() -> usize {
    5
}
fn default_num_thresholds() -> usize {
    99
}
fn default_hidden_layers() -> usize {
    3
}
fn default_hidden_units() -> usize {
    256
}
fn default_alpha() -> f64 {
    0.1
}
fn default_temperature() -> f64 {
    1.0
}
fn default_steps() -> usize {
    100
}
fn default_lr() -> f64 {
    0.01
}
fn default_batch_forward() -> usize {
    90
}
fn default_batch_replay() -> usize {
    10
}
fn default_epsilon_start() -> f64 {
    0.1
}
fn default_epsilon_end() -> f64 {
    0.01
}
fn default_buffer_capacity() -> usize {
    100
}
fn default_ensemble_size() -> usize {
    1000
}
fn default_true() -> bool {
    true
}
fn default_id_test_fraction() -> f64 {
    0.2
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.seeds.is_empty() {
            return Err(usage("config needs at least one seed"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(usage("train_fraction must lie in (0,1)"));
        }
        if self.output_dir.is_empty() {
            return Err(usage("output_dir must be nonempty"));
        }
        self.train_config(0).validate().map_err(usage)?;
        // Exercise the remaining constructors so a bad value fails before
        // any dataset work or output directory is created.
        PolicyConfig::new(1, self.num_thresholds, self.d_max, self.hidden_layers, self.hidden_units)
            .map_err(usage)?;
        RewardParams::new(vec![self.alpha; 2], self.beta.unwrap_or(0.0), self.temperature)
            .map_err(usage)?;
        if let Some(shift) = &self.shift {
            if !(shift.id_test_fraction > 0.0 && shift.id_test_fraction < 1.0) {
                return Err(usage("shift.id_test_fraction must lie in (0,1)"));
            }
        }
        Ok(())
    }

    /// FNV-1a of the canonical JSON form with output_dir blanked, so moving
    /// outputs around does not invalidate artifacts.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.output_dir = String::new();
        let text = serde_json::to_string(&canon).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            lr: self.lr,
            batch_forward: self.batch_forward,
            batch_replay: self.batch_replay,
            epsilon_start: self.epsilon_start,
            epsilon_end: self.epsilon_end,
            buffer_capacity: self.buffer_capacity,
            seed,
            ..TrainConfig::default()
        }
    }

    pub fn policy_config(&self, num_features: usize) -> CliResult<PolicyConfig> {
        PolicyConfig::new(
            num_features,
            self.num_thresholds,
            self.d_max,
            self.hidden_layers,
            self.hidden_units,
        )
        .map_err(usage)
    }

    pub fn reward_params(&self, train: &Dataset) -> CliResult<RewardParams> {
        let beta = self
            .beta
            .unwrap_or_else(|| treeflow::reward::beta_default(train.num_features()));
        RewardParams::new(vec![self.alpha; train.num_classes()], beta, self.temperature)
            .map_err(usage)
    }

    /// Output directory resolved against --out, then $TREEFLOW_OUT, then the
    /// working directory.
    pub fn resolve_out(&self, override_dir: Option<&Path>) -> PathBuf {
        if let Some(dir) = override_dir {
            return dir.to_path_buf();
        }
        let configured = PathBuf::from(&self.output_dir);
        if configured.is_absolute() {
            return configured;
        }
        match std::env::var_os(OUT_ROOT_ENV) {
            Some(root) => PathBuf::from(root).join(configured),
            None => configured,
        }
    }
}

pub fn load_with_hash(path: &Path) -> CliResult<(RunConfig, String)> {
    let config = RunConfig::load(path)?;
    let hash = config.hash();
    Ok((config, hash))
}
