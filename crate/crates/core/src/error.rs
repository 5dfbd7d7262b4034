use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: row {row}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    #[error("operation requires estimated weights")]
    NotApplicable,

    #[error("rank-deficient normal matrix (condition {condition:.3e}); unidentified direction: {direction}")]
    RankDeficient { condition: f64, direction: String },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("no convergence after {iterations} iterations (last change {change:.3e})")]
    Convergence {
        iterations: usize,
        change: f64,
        last_estimate: Vec<f64>,
    },

    #[error("nonpositive degrees of freedom: n = {n}, p + q = {params}")]
    NonPositiveDf { n: usize, params: usize },

    #[error("singular leverage adjustment for cluster {cluster_id} (condition {condition:.3e})")]
    SingularLeverage { cluster_id: String, condition: f64 },

    #[error("infeasible generative spec: {0}")]
    Infeasible(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the numbers rather than the inputs'
    /// structure; the harness records these per replication.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::Singular(_)
                | Error::Convergence { .. }
                | Error::SingularLeverage { .. }
                | Error::DegenerateWeights(_)
        )
    }
}
