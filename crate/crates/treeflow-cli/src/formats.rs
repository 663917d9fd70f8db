//! On-disk artifact formats: tree JSON, model checkpoints, ensemble files,
//! metrics CSV, and the truncating scientific renderer for search-space
//! counts. All floats are written in the shortest exact decimal form, so
//! every format round-trips bit for bit.

use std::fs;
use std::path::Path;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use treeflow::tree::{apply_action, empty_state, num_decision_nodes};
use treeflow::training::StepMetrics;
use treeflow::{Action, DecisionRule, NodeSlot, PolicyConfig, PolicyModel, TreeState};

use crate::errors::{data, runtime, CliResult};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TreeJson {
    pub d_max: usize,
    /// Threshold grid size; node threshold indices address this grid.
    pub num_thresholds: usize,
    pub nodes: Vec<NodeJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NodeJson {
    pub index: usize,
    pub kind: NodeKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold_index: Option<usize>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Decision,
    Leaf,
}

pub fn tree_to_json(tree: &TreeState, num_thresholds: usize) -> TreeJson {
    let mut nodes = Vec::new();
    for i in 0..tree.num_slots() {
        match tree.slot(i) {
            NodeSlot::Unspecified => {}
            NodeSlot::Leaf => nodes.push(NodeJson {
                index: i,
                kind: NodeKind::Leaf,
                feature: None,
                threshold_index: None,
            }),
            NodeSlot::Decision(rule) => nodes.push(NodeJson {
                index: i,
                kind: NodeKind::Decision,
                feature: Some(rule.feature),
                threshold_index: Some(rule.threshold_index),
            }),
        }
    }
    TreeJson { d_max: tree.d_max(), num_thresholds, nodes }
}

/// Rebuild a terminal tree by replaying decisions in breadth-first order
/// (parents always precede children) and terminating. The recorded leaf set
/// must match the frontier the decisions induce.
pub fn tree_from_json(json: &TreeJson) -> CliResult<TreeState> {
    let mut state = empty_state(json.d_max).map_err(data)?;
    let mut decisions: Vec<&NodeJson> =
        json.nodes.iter().filter(|n| n.kind == NodeKind::Decision).collect();
    decisions.sort_by_key(|n| n.index);
    for node in decisions {
        let (Some(feature), Some(ti)) = (node.feature, node.threshold_index) else {
            return Err(data(format!("decision node {} lacks a rule", node.index)));
        };
        let rule = DecisionRule::new(feature, ti, json.num_thresholds).map_err(data)?;
        state = apply_action(&state, &Action::Split { slot: node.index, rule }).map_err(data)?;
    }
    let recorded: Vec<usize> =
        json.nodes.iter().filter(|n| n.kind == NodeKind::Leaf).map(|n| n.index).collect();
    let mut recorded_sorted = recorded;
    recorded_sorted.sort_unstable();
    if recorded_sorted != state.frontier() {
        return Err(data("leaf set does not match the decision structure"));
    }
    apply_action(&state, &Action::Terminate).map_err(data)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointFile {
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub num_features: usize,
    pub num_thresholds: usize,
    pub d_max: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub num_classes: usize,
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub temperature: f64,
    /// Canonical flat order: encoder layers (weights then bias), rule head,
    /// termination head, log_z last.
    pub params: Vec<f64>,
}

impl CheckpointFile {
    pub fn policy_config(&self) -> CliResult<PolicyConfig> {
        PolicyConfig::new(
            self.num_features,
            self.num_thresholds,
            self.d_max,
            self.hidden_layers,
            self.hidden_units,
        )
        .map_err(data)
    }

    pub fn restore_model(&self) -> CliResult<PolicyModel> {
        let config = self.policy_config()?;
        let mut model = PolicyModel::new(config, &mut treeflow::seeded_rng(0));
        model.set_from_flat(&self.params).map_err(data)?;
        Ok(model)
    }
}

pub fn read_checkpoint(path: &Path) -> CliResult<CheckpointFile> {
    let text = fs::read_to_string(path)
        .map_err(|e| data(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let ck: CheckpointFile = serde_json::from_str(&text)
        .map_err(|e| data(format!("checkpoint {}: {e}", path.display())))?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(data(format!(
            "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
            ck.version
        )));
    }
    Ok(ck)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleEntry {
    pub tree: TreeJson,
    pub log_posterior: f64,
    pub alpha: Vec<f64>,
}

pub fn read_ensemble(path: &Path) -> CliResult<Vec<EnsembleEntry>> {
    let text = fs::read_to_string(path)
        .map_err(|e| data(format!("cannot read ensemble {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| data(format!("ensemble {}: {e}", path.display())))
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub config_hash: String,
    pub seed: u64,
    pub steps: usize,
    pub final_mean_loss: f64,
    pub final_log_z: f64,
    pub buffer_max_log_reward: f64,
    pub train_rows: usize,
    pub test_rows: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalJson {
    pub config_hash: String,
    pub seed: u64,
    pub mode: String,
    pub test_set: String,
    pub samples: usize,
    pub accuracy: f64,
    pub f1: f64,
    pub model_size: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub config_hash: String,
    pub seed: u64,
    pub num_trees: usize,
    pub log_partition: f64,
    pub log_z: f64,
    pub tv_distance: f64,
    pub log_z_gap: f64,
    pub tv_threshold: f64,
    pub log_z_threshold: f64,
    pub passed: bool,
    pub top_k: Vec<OracleTopEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleTopEntry {
    pub probability: f64,
    pub log_reward: f64,
    pub num_decision_nodes: usize,
    pub tree: TreeJson,
}

pub fn oracle_top_k(
    exact: &treeflow::oracle::ExactPosterior,
    num_thresholds: usize,
    k: usize,
) -> Vec<OracleTopEntry> {
    let mut order: Vec<usize> = (0..exact.trees.len()).collect();
    order.sort_by(|&a, &b| {
        exact.probabilities[b]
            .partial_cmp(&exact.probabilities[a])
            .expect("finite probabilities")
    });
    order
        .into_iter()
        .take(k)
        .map(|i| OracleTopEntry {
            probability: exact.probabilities[i],
            log_reward: exact.log_rewards[i],
            num_decision_nodes: num_decision_nodes(&exact.trees[i]),
            tree: tree_to_json(&exact.trees[i], num_thresholds),
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| runtime(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| runtime(format!("write {}: {e}", path.display())))
}

/// Six data columns after a hash comment line; floats in shortest exact
/// form, so reruns are byte-identical.
pub fn write_metrics_csv(path: &Path, config_hash: &str, metrics: &[StepMetrics]) -> CliResult<()> {
    let mut out = String::new();
    out.push_str(&format!("# config_hash={config_hash}\n"));
    out.push_str("step,mean_loss,log_z,epsilon,buffer_min,buffer_max\n");
    for m in metrics {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.step, m.mean_loss, m.log_z, m.epsilon, m.buffer_min, m.buffer_max
        ));
    }
    fs::write(path, out).map_err(|e| runtime(format!("write {}: {e}", path.display())))
}

/// Truncated (never rounded) scientific form with 4 significant digits:
/// 56098964644840 -> "5.609 x 10^13". Exact because it works on the decimal
/// digit string.
pub fn sci_trunc4(n: &BigUint) -> String {
    let digits = n.to_string();
    if digits == "0" {
        return "0.000 x 10^0".to_string();
    }
    let exponent = digits.len() - 1;
    let mantissa: String = digits.chars().chain(std::iter::repeat('0')).take(4).collect();
    format!("{}.{} x 10^{}", &mantissa[..1], &mantissa[1..], exponent)
}
