use thiserror::Error;

/// Errors raised by the library surface.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Two bodies closer than the collision threshold. `node` is set when the
    /// offending configuration is a node of a discrete path.
    #[error("collision between bodies {i} and {j}{}", node.map(|k| format!(" at node {k}")).unwrap_or_default())]
    Collision {
        i: usize,
        j: usize,
        node: Option<usize>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no interior minimum of the free-time objective on tau in [{lo}, {hi}]")]
    Bracket { lo: f64, hi: f64 },

    #[error("energy drift {drift:e} exceeds tolerance {tol:e} at t = {t}")]
    EnergyDrift { t: f64, drift: f64, tol: f64 },

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    #[error("experiment failed: {0}")]
    Experiment(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Tags a collision error with the path node where it happened.
    pub(crate) fn at_node(self, k: usize) -> Self {
        match self {
            Error::Collision { i, j, .. } => Error::Collision { i, j, node: Some(k) },
            other => other,
        }
    }
}
