use thiserror::Error;

/// Which clause of the replication preconditions failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReductionClause {
    /// The proxy set is empty.
    EmptyProxySet,
    /// The replicating agent is itself listed as a proxy.
    AgentInProxySet,
    /// A proxy retains part of its own vote.
    ProxyRetains { proxy: usize },
    /// The replicating agent delegates to someone outside the proxy set.
    SupportOutsideProxies { target: usize },
    /// The replicating agent gives nothing to one of its proxies.
    MissingProxyShare { proxy: usize },
    /// The replicating agent sits inside a delegation cycle.
    AgentInCycle,
}

impl std::fmt::Display for ReductionClause {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReductionClause::EmptyProxySet => write!(f, "proxy set is empty"),
            ReductionClause::AgentInProxySet => {
                write!(f, "replicating agent is listed among its own proxies")
            }
            ReductionClause::ProxyRetains { proxy } => {
                write!(f, "proxy agent {} retains part of its vote", proxy + 1)
            }
            ReductionClause::SupportOutsideProxies { target } => write!(
                f,
                "replicating agent delegates to agent {} outside the proxy set",
                target + 1
            ),
            ReductionClause::MissingProxyShare { proxy } => write!(
                f,
                "replicating agent gives no share to proxy agent {}",
                proxy + 1
            ),
            ReductionClause::AgentInCycle => {
                write!(f, "replicating agent is involved in a delegation cycle")
            }
        }
    }
}

/// Errors raised by the library. Agent indices are stored 0-based and
/// displayed 1-based.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("agent {}: empty delegation profile", agent + 1)]
    EmptyProfile { agent: usize },

    #[error("agent {}: negative share {value} assigned to agent {}", agent + 1, target + 1)]
    NegativeShare {
        agent: usize,
        target: usize,
        value: f64,
    },

    #[error("agent {}: shares sum to {sum} (expected 1 within 1e-9)", agent + 1)]
    NotNormalized { agent: usize, sum: f64 },

    #[error("agent {}: non-finite share", agent + 1)]
    NonFiniteShare { agent: usize },

    #[error("dimension mismatch: {what} has length {found}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("agent {} owns more than one profile", agent + 1)]
    DuplicateOwner { agent: usize },

    #[error("agent index {} out of range 1..={n}", agent + 1)]
    AgentOutOfRange { agent: usize, n: usize },

    #[error("agent index {index} out of range 1..={n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("agent set must be nonempty")]
    EmptySet,

    #[error("epsilon {0} outside the open interval (0, 1)")]
    EpsilonOutOfRange(f64),

    #[error("linear solve failed (residual {residual:e})")]
    SolverFailure { residual: f64 },

    #[error("series did not converge within {k_used} terms (last change {change:e})")]
    NoConvergence { k_used: usize, change: f64 },

    #[error("agent {}: self-share {value} is not 0 or 1", agent + 1)]
    NotInClassB { agent: usize, value: f64 },

    #[error("pure-support enumeration would visit {size} outcomes (limit 10^7)")]
    SupportTooLarge { size: f64 },

    #[error("replication precondition violated: {0}")]
    PreconditionViolated(ReductionClause),

    #[error("replication denominator {0:e} is not positive (agent is trapped with its proxies)")]
    DegenerateDenominator(f64),

    #[error("agent {} has an empty neighborhood", agent + 1)]
    EmptyNeighborhood { agent: usize },

    #[error("agent {}: current profile delegates outside its neighborhood", agent + 1)]
    OutsideNeighborhood { agent: usize },

    #[error("agent {}: preference entries must be finite", agent + 1)]
    NonFinitePreference { agent: usize },

    #[error("parameter {name} = {value} out of range")]
    ParameterOutOfRange { name: &'static str, value: f64 },

    #[error("simplex grid too large ({agents} agents, step {step})")]
    GridTooLarge { agents: usize, step: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
