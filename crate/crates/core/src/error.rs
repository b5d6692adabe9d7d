use thiserror::Error;

/// Node ids in errors are the ids used in the input file.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("cycle detected at node {node}")]
    CycleDetected { node: u64 },
    #[error("child probabilities of node {node} sum to {sum}, expected 1")]
    ProbabilityNotNormalized { node: u64, sum: f64 },
    #[error("node {node} has non-positive transition probability {prob}")]
    NonPositiveProbability { node: u64, prob: f64 },
    #[error("node {node} has negative rate {rate}")]
    NegativeRate { node: u64, rate: f64 },
    #[error("node {node} is at time {time} but its parent is at time {parent_time}")]
    TimeGap { node: u64, time: usize, parent_time: usize },
    #[error("duplicate node id {node}")]
    DuplicateNode { node: u64 },
    #[error("node {node} refers to unknown parent {parent}")]
    UnknownParent { node: u64, parent: u64 },
    #[error("expected exactly one root at time 0, found {count}")]
    RootCount { count: usize },
    #[error("node {node} at time {time} < T has no children")]
    MissingChildren { node: u64, time: usize },
    #[error("node {node} at time {time} is beyond the horizon")]
    BeyondHorizon { node: u64, time: usize },
    #[error("node {node} has a non-finite value")]
    NonFinite { node: u64 },
    #[error("node {node} has a negative price")]
    NegativePrice { node: u64 },
    #[error("horizon must be at least 1")]
    InvalidHorizon,
    #[error("unknown node {node}")]
    UnknownNode { node: u64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("negative lot at node {node}: N[{i},{j}] = {qty}")]
    NegativeLot { node: u64, i: usize, j: usize, qty: f64 },
    #[error("sell-down violated at node {node}: N[{i},{j}] = {qty} exceeds parent holding {parent_qty}")]
    SellDownViolated { node: u64, i: usize, j: usize, qty: f64, parent_qty: f64 },
    #[error("terminal node {node} still holds N[{i},{j}] = {qty}")]
    NotLiquidatedAtT { node: u64, i: usize, j: usize, qty: f64 },
    #[error("lot ({i},{j}) out of range at node {node}")]
    LotOutOfRange { node: u64, i: usize, j: usize },
    #[error("strategy belongs to a different tree")]
    TreeMismatch,
    #[error("invalid stopping time at node {node}: {reason}")]
    InvalidStoppingTime { node: u64, reason: String },

    #[error("tax rate {0} outside [0,1)")]
    InvalidTaxRate(f64),
    #[error("initial capital {0} is not finite")]
    NonFiniteCapital(f64),
    #[error("bank recursion {recursion} disagrees with closed form {closed_form} at node {node}")]
    EngineInconsistency { node: u64, recursion: f64, closed_form: f64 },
    #[error("invalid tax rule at node {node}: {reason}")]
    InvalidTaxRule { node: u64, reason: String },
    #[error("tax rule enumeration needs {count} paths, cap is {cap}")]
    EnumerationCapExceeded { count: u128, cap: u64 },

    #[error("rate {rate} at node {node} exceeds bound {bound}")]
    RateBoundViolated { node: u64, rate: f64, bound: f64 },
    #[error("negative price at node {node} not allowed here")]
    NegativePriceForbidden { node: u64 },
    #[error("negative frictionless wealth {wealth} at node {node}")]
    NegativeWealthEncountered { node: u64, wealth: f64 },

    #[error("dimension {d} exceeds cap {cap}")]
    DimensionCapExceeded { d: usize, cap: usize },
    #[error("decomposition QP failed: {0}")]
    QpInfeasible(String),
    #[error("admissible set at node {node} is unbounded")]
    UnboundedAdmissibleSet { node: u64 },
    #[error("arbitrage at node {node}")]
    ArbitrageDetected { node: u64 },

    #[error("optimizer diverged after {iterations} iterations: {reason}")]
    Diverged { iterations: usize, reason: String },
    #[error("{count} decision variables, oracle supports at most {max}")]
    TooManyVariables { count: usize, max: usize },
    #[error("no feasible strategy with finite utility")]
    Infeasible,
    #[error("initial capital must be positive, got {0}")]
    NonPositiveCapital(f64),

    #[error("no root of the slope in ({lo}, {hi})")]
    NoRootInBracket { lo: f64, hi: f64 },
    #[error("truncation level {n} must be at least 3")]
    InvalidTruncation { n: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Domain errors are properties of a well-formed problem (arbitrage,
    /// infeasibility, ...); everything else is bad input.
    pub fn is_domain(&self) -> bool {
        matches!(
            self,
            Error::ArbitrageDetected { .. }
                | Error::Infeasible
                | Error::UnboundedAdmissibleSet { .. }
                | Error::NegativeWealthEncountered { .. }
                | Error::Diverged { .. }
                | Error::EngineInconsistency { .. }
                | Error::EnumerationCapExceeded { .. }
                | Error::QpInfeasible(_)
                | Error::NoRootInBracket { .. }
                | Error::RateBoundViolated { .. }
                | Error::NegativePriceForbidden { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
