//! Decision-tree state space: breadth-first slot arrays, routing, leaf
//! statistics, legal-action masks, and the transition function of the
//! sequential construction process.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Above this feature count, path encodings switch from one-hot feature
/// blocks to a single scaled-index entry to bound the encoder input width.
pub const ONE_HOT_FEATURE_CUTOFF: usize = 64;

/// Split rule: route x to the left child iff x[feature] <= threshold_value.
/// Thresholds form the interior grid (i+1)/(t+1) over [0,1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionRule {
    pub feature: usize,
    pub threshold_index: usize,
    pub threshold_value: f64,
}

impl DecisionRule {
    pub fn new(feature: usize, threshold_index: usize, num_thresholds: usize) -> Result<Self> {
        if num_thresholds == 0 || threshold_index >= num_thresholds {
            return Err(Error::BadParams("threshold index out of grid"));
        }
        Ok(DecisionRule {
            feature,
            threshold_index,
            threshold_value: threshold_value(threshold_index, num_thresholds),
        })
    }
}

/// Interior grid point (index+1)/(t+1); excludes 0 and 1 since boundary
/// thresholds can never produce a valid split on [0,1] data.
pub fn threshold_value(threshold_index: usize, num_thresholds: usize) -> f64 {
    (threshold_index as f64 + 1.0) / (num_thresholds as f64 + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeSlot {
    Unspecified,
    Leaf,
    Decision(DecisionRule),
}

/// Either split one frontier slot or terminate the whole construction,
/// turning every frontier slot into a leaf.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    Terminate,
    Split { slot: usize, rule: DecisionRule },
}

/// Fixed-capacity breadth-first node array: children of slot i live at
/// slots 2i+1 and 2i+2. Depth-d_max slots never hold decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeState {
    slots: Vec<NodeSlot>,
    d_max: usize,
    terminal: bool,
}

/// All slots unspecified; the frontier is the root alone.
pub fn empty_state(d_max: usize) -> Result<TreeState> {
    if d_max == 0 || d_max > 24 {
        return Err(Error::BadDepth(d_max));
    }
    let num_slots = (1usize << (d_max + 1)) - 1;
    Ok(TreeState {
        slots: vec![NodeSlot::Unspecified; num_slots],
        d_max,
        terminal: false,
    })
}

impl TreeState {
    pub fn d_max(&self) -> usize {
        self.d_max
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn slot(&self, i: usize) -> NodeSlot {
        self.slots[i]
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    pub fn depth_of(slot: usize) -> usize {
        (usize::BITS - 1 - (slot + 1).leading_zeros()) as usize
    }

    /// Slots eligible to receive a split or become leaves: the root while no
    /// decision exists, otherwise every non-decision child of a decision.
    /// Ascending order; this ordering is the contract shared with masks,
    /// path encodings, and leaf statistics.
    pub fn frontier(&self) -> Vec<usize> {
        if !matches!(self.slots[0], NodeSlot::Decision(_)) {
            return vec![0];
        }
        let mut out = Vec::new();
        for (i, s) in self.slots.iter().enumerate() {
            if matches!(s, NodeSlot::Decision(_)) {
                for child in [2 * i + 1, 2 * i + 2] {
                    if !matches!(self.slots[child], NodeSlot::Decision(_)) {
                        out.push(child);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Structure-identity key: two states are the same construction state
    /// iff their keys match. Trees that induce the same data partition but
    /// differ structurally stay distinct on purpose: the posterior is over
    /// structures.
    pub fn canonical_key(&self) -> Vec<u64> {
        self.slots
            .iter()
            .map(|s| match s {
                NodeSlot::Unspecified => u64::MAX,
                NodeSlot::Leaf => u64::MAX - 1,
                NodeSlot::Decision(r) => {
                    ((r.feature as u64) << 32) | (r.threshold_index as u64)
                }
            })
            .collect()
    }

    /// Decision slots whose children are both non-decisions; deleting one of
    /// these is the backward move of the construction process.
    pub fn removable_decision_nodes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, s) in self.slots.iter().enumerate() {
            if matches!(s, NodeSlot::Decision(_))
                && !matches!(self.slots[2 * i + 1], NodeSlot::Decision(_))
                && !matches!(self.slots[2 * i + 2], NodeSlot::Decision(_))
            {
                out.push(i);
            }
        }
        out
    }

    /// The non-terminal state this terminal tree was terminated from.
    pub fn unterminated_twin(&self) -> TreeState {
        let mut slots = self.slots.clone();
        for s in slots.iter_mut() {
            if matches!(s, NodeSlot::Leaf) {
                *s = NodeSlot::Unspecified;
            }
        }
        TreeState { slots, d_max: self.d_max, terminal: false }
    }

    /// Non-terminal state with one removable decision deleted.
    pub fn without_decision(&self, slot: usize) -> TreeState {
        debug_assert!(!self.terminal);
        debug_assert!(self.removable_decision_nodes().contains(&slot));
        let mut slots = self.slots.clone();
        slots[slot] = NodeSlot::Unspecified;
        TreeState { slots, d_max: self.d_max, terminal: false }
    }

    /// Descend from the root by the routing convention until a non-decision
    /// slot is reached. On terminal trees this is the leaf that x lands in.
    pub fn descend(&self, x: &[f64]) -> usize {
        let mut slot = 0;
        while let NodeSlot::Decision(rule) = self.slots[slot] {
            slot = if x[rule.feature] <= rule.threshold_value {
                2 * slot + 1
            } else {
                2 * slot + 2
            };
        }
        slot
    }
}

/// Transition function. Structural legality (frontier membership, depth,
/// non-terminal input) is enforced here; data-dependent mask legality is the
/// caller's contract.
pub fn apply_action(s: &TreeState, a: &Action) -> Result<TreeState> {
    if s.terminal {
        return Err(Error::TerminalState);
    }
    let mut next = s.clone();
    match a {
        Action::Terminate => {
            for slot in s.frontier() {
                next.slots[slot] = NodeSlot::Leaf;
            }
            next.terminal = true;
        }
        Action::Split { slot, rule } => {
            if !s.frontier().contains(slot) {
                return Err(Error::NotFrontier(*slot));
            }
            if TreeState::depth_of(*slot) >= s.d_max {
                return Err(Error::DepthExceeded(*slot));
            }
            next.slots[*slot] = NodeSlot::Decision(*rule);
        }
    }
    Ok(next)
}

/// Count of decision slots.
pub fn num_decision_nodes(s: &TreeState) -> usize {
    s.slots
        .iter()
        .filter(|s| matches!(s, NodeSlot::Decision(_)))
        .count()
}

/// Leaf slot that a terminal tree routes x to. Ties x == threshold go left.
pub fn route(tree: &TreeState, x: &[f64]) -> usize {
    debug_assert!(tree.terminal, "route is defined on terminal trees");
    tree.descend(x)
}

/// Legality of every (frontier slot, feature, threshold) split plus the
/// always-legal terminate action. A split is legal iff each side of the
/// threshold receives at least one of the rows currently routed to the slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionMask {
    pub frontier: Vec<usize>,
    pub num_features: usize,
    pub num_thresholds: usize,
    /// frontier-position-major, then feature, then threshold.
    allow: Vec<bool>,
}

impl ActionMask {
    pub fn allowed(&self, frontier_pos: usize, feature: usize, threshold_index: usize) -> bool {
        self.allow[(frontier_pos * self.num_features + feature) * self.num_thresholds
            + threshold_index]
    }

    pub fn num_allowed_splits(&self) -> usize {
        self.allow.iter().filter(|&&b| b).count()
    }

    /// Whether an action is legal under this mask.
    pub fn permits(&self, a: &Action) -> bool {
        match a {
            Action::Terminate => true,
            Action::Split { slot, rule } => {
                if rule.threshold_index >= self.num_thresholds
                    || rule.feature >= self.num_features
                {
                    return false;
                }
                match self.frontier.binary_search(slot) {
                    Ok(pos) => self.allowed(pos, rule.feature, rule.threshold_index),
                    Err(_) => false,
                }
            }
        }
    }

    /// Legal actions in canonical order: terminate first, then splits by
    /// (frontier position, feature, threshold index).
    pub fn allowed_actions(&self) -> Vec<Action> {
        let mut out = Vec::with_capacity(1 + self.num_allowed_splits());
        out.push(Action::Terminate);
        let mut k = 0;
        for &slot in &self.frontier {
            for f in 0..self.num_features {
                for ti in 0..self.num_thresholds {
                    if self.allow[k] {
                        out.push(Action::Split {
                            slot,
                            rule: DecisionRule::new(f, ti, self.num_thresholds)
                                .expect("grid-valid rule"),
                        });
                    }
                    k += 1;
                }
            }
        }
        out
    }
}

/// Build the mask for a non-terminal state against a unit-range dataset.
pub fn legal_action_mask(
    s: &TreeState,
    data: &Dataset,
    num_thresholds: usize,
) -> Result<ActionMask> {
    if s.terminal {
        return Err(Error::TerminalState);
    }
    if num_thresholds == 0 {
        return Err(Error::BadParams("threshold grid is empty"));
    }
    let frontier = s.frontier();
    let d = data.num_features();
    let t = num_thresholds;
    // Per frontier slot and feature, the min and max of rows routed there:
    // a threshold splits the slot iff min <= thr < max.
    let mut lo = vec![f64::INFINITY; frontier.len() * d];
    let mut hi = vec![f64::NEG_INFINITY; frontier.len() * d];
    let mut occupied = vec![false; frontier.len()];
    for i in 0..data.num_rows() {
        let x = data.row(i);
        let slot = s.descend(x);
        let pos = frontier.binary_search(&slot).expect("rows route to frontier slots");
        occupied[pos] = true;
        for (f, &v) in x.iter().enumerate() {
            let k = pos * d + f;
            if v < lo[k] {
                lo[k] = v;
            }
            if v > hi[k] {
                hi[k] = v;
            }
        }
    }
    let mut allow = vec![false; frontier.len() * d * t];
    for (pos, &slot) in frontier.iter().enumerate() {
        if !occupied[pos] || TreeState::depth_of(slot) >= s.d_max() {
            continue;
        }
        for f in 0..d {
            let (mn, mx) = (lo[pos * d + f], hi[pos * d + f]);
            for ti in 0..t {
                let thr = threshold_value(ti, t);
                allow[(pos * d + f) * t + ti] = mn <= thr && mx > thr;
            }
        }
    }
    Ok(ActionMask { frontier, num_features: d, num_thresholds: t, allow })
}

/// Per-frontier-slot class counts; every dataset row lands in exactly one
/// frontier slot, so the counts partition the class histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafStats {
    slots: Vec<usize>,
    num_classes: usize,
    counts: Vec<u64>, // slots.len() x num_classes
}

impl LeafStats {
    /// Empty statistics over the state's current frontier.
    pub fn empty(tree: &TreeState, num_classes: usize) -> LeafStats {
        let slots = tree.frontier();
        let counts = vec![0u64; slots.len() * num_classes];
        LeafStats { slots, num_classes, counts }
    }

    /// Accumulate one batch. Batches may arrive in any order and any
    /// partition of the data; counts add.
    pub fn add_batch<'a, I>(&mut self, tree: &TreeState, rows: I)
    where
        I: IntoIterator<Item = (&'a [f64], usize)>,
    {
        for (x, y) in rows {
            let slot = tree.descend(x);
            let pos = self.slots.binary_search(&slot).expect("row routed off-frontier");
            self.counts[pos * self.num_classes + y] += 1;
        }
    }

    pub fn num_leaves(&self) -> usize {
        self.slots.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn slots(&self) -> &[usize] {
        &self.slots
    }

    pub fn count(&self, leaf_pos: usize, class: usize) -> u64 {
        self.counts[leaf_pos * self.num_classes + class]
    }

    pub fn leaf_total(&self, leaf_pos: usize) -> u64 {
        (0..self.num_classes).map(|c| self.count(leaf_pos, c)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Counts for the leaf at the given frontier slot id.
    pub fn counts_at_slot(&self, slot: usize) -> Option<&[u64]> {
        self.slots
            .binary_search(&slot)
            .ok()
            .map(|pos| &self.counts[pos * self.num_classes..(pos + 1) * self.num_classes])
    }

    /// Construction helper for tests and oracles.
    pub fn from_raw(counts_per_leaf: Vec<Vec<u64>>) -> LeafStats {
        let num_classes = counts_per_leaf.first().map_or(0, |c| c.len());
        let slots = (0..counts_per_leaf.len()).collect();
        let counts = counts_per_leaf.into_iter().flatten().collect();
        LeafStats { slots, num_classes, counts }
    }
}

/// Single-pass leaf statistics over a whole dataset.
pub fn leaf_counts(tree: &TreeState, data: &Dataset) -> LeafStats {
    let mut stats = LeafStats::empty(tree, data.num_classes());
    stats.add_batch(tree, (0..data.num_rows()).map(|i| (data.row(i), data.label(i))));
    stats
}

/// Width of one ancestor block in a path encoding.
pub fn path_block_size(num_features: usize) -> usize {
    if num_features <= ONE_HOT_FEATURE_CUTOFF {
        num_features + 2
    } else {
        3
    }
}

/// One fixed-length vector per frontier slot describing its root-to-slot
/// path: d_max blocks, block k carrying (feature one-hot or scaled index,
/// threshold value, left/right bit) of the k-th ancestor decision,
/// zero-padded past the path length. Order matches [`TreeState::frontier`].
pub fn leaf_path_encoding(s: &TreeState, num_features: usize) -> Vec<Vec<f64>> {
    let block = path_block_size(num_features);
    let width = s.d_max() * block;
    let one_hot = num_features <= ONE_HOT_FEATURE_CUTOFF;
    s.frontier()
        .iter()
        .map(|&slot| {
            let mut v = vec![0.0; width];
            // Ancestors from root to slot: collect the child chain.
            let mut chain = Vec::new();
            let mut cur = slot;
            while cur != 0 {
                chain.push(cur);
                cur = (cur - 1) / 2;
            }
            chain.reverse();
            let mut parent = 0usize;
            for (k, &child) in chain.iter().enumerate() {
                let rule = match s.slot(parent) {
                    NodeSlot::Decision(r) => r,
                    _ => unreachable!("ancestors of a frontier slot are decisions"),
                };
                let base = k * block;
                if one_hot {
                    v[base + rule.feature] = 1.0;
                    v[base + num_features] = rule.threshold_value;
                    v[base + num_features + 1] = if child == 2 * parent + 2 { 1.0 } else { 0.0 };
                } else {
                    v[base] = rule.feature as f64 / num_features as f64;
                    v[base + 1] = rule.threshold_value;
                    v[base + 2] = if child == 2 * parent + 2 { 1.0 } else { 0.0 };
                }
                parent = child;
            }
            v
        })
        .collect()
}
