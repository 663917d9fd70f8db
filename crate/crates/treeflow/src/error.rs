//! Crate-wide error values. Variants are deliberately fine-grained so the
//! CLI can map dataset problems, contract violations, and runtime failures
//! to distinct exit codes.

use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Dataset has no rows.
    EmptyDataset,
    /// A feature value or derived quantity is NaN/infinite.
    NonFinite(&'static str),
    /// Labels must cover 0..num_classes with num_classes >= 2.
    BadLabels(String),
    /// A split fraction produced an empty partition.
    DegenerateSplit(String),
    /// Shift threshold leaves one side of the partition empty.
    EmptyShiftSide(String),
    /// Synthetic generator needs at least 4 rows to cover the XOR patterns.
    TooFewRows { got: usize, need: usize },
    /// Feature index out of range.
    BadFeature { index: usize, num_features: usize },
    /// Tree capacity requires depth >= 1.
    BadDepth(usize),
    /// Action applied to a terminal state.
    TerminalState,
    /// Split target is not a frontier slot.
    NotFrontier(usize),
    /// Split target sits at maximum depth.
    DepthExceeded(usize),
    /// Trajectory step not legal under the state's action mask.
    IllegalStep(usize),
    /// Search-space count requires at least as many features as depth levels.
    CountNeedsFeatures { features: usize, depth: usize },
    /// Invalid Dirichlet or prior parameter.
    BadParams(&'static str),
    /// Ensemble operations need at least one member.
    EmptyEnsemble,
    /// Score statistics need at least two rows.
    TooFewScores(usize),
    /// Enumeration exceeded its configured cap; count at abort time.
    CapExceeded { cap: usize, seen: usize },
    /// A sampled tree is missing from the enumerated support.
    OutOfSupport,
    /// Invalid training configuration.
    BadConfig(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptyDataset => write!(f, "dataset has no rows"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::BadLabels(msg) => write!(f, "bad labels: {msg}"),
            Error::DegenerateSplit(msg) => write!(f, "degenerate split: {msg}"),
            Error::EmptyShiftSide(msg) => write!(f, "empty shift side: {msg}"),
            Error::TooFewRows { got, need } => {
                write!(f, "need at least {need} rows, got {got}")
            }
            Error::BadFeature { index, num_features } => {
                write!(f, "feature index {index} out of range (d={num_features})")
            }
            Error::BadDepth(d) => write!(f, "max depth must be >= 1, got {d}"),
            Error::TerminalState => write!(f, "action applied to a terminal state"),
            Error::NotFrontier(slot) => write!(f, "slot {slot} is not on the frontier"),
            Error::DepthExceeded(slot) => {
                write!(f, "slot {slot} is at maximum depth and cannot split")
            }
            Error::IllegalStep(step) => write!(f, "trajectory step {step} is masked"),
            Error::CountNeedsFeatures { features, depth } => {
                write!(f, "counting depth {depth} needs >= {depth} features, got {features}")
            }
            Error::BadParams(what) => write!(f, "invalid parameter: {what}"),
            Error::EmptyEnsemble => write!(f, "ensemble has no members"),
            Error::TooFewScores(n) => write!(f, "score statistics need >= 2 rows, got {n}"),
            Error::CapExceeded { cap, seen } => {
                write!(f, "enumeration cap {cap} exceeded after {seen} trees")
            }
            Error::OutOfSupport => write!(f, "sampled tree not in enumerated support"),
            Error::BadConfig(what) => write!(f, "invalid config: {what}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
