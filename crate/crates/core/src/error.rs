use thiserror::Error;

use crate::expr::ExprError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A coefficient expression failed to parse or evaluate.
    #[error("{context}: {source}")]
    Expr {
        context: String,
        #[source]
        source: ExprError,
    },
    #[error("malformed problem: {0}")]
    MalformedSpec(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("numeric domain error: {0}")]
    NumericDomain(String),
    #[error("non-integrable Levy measure: {0}")]
    NonIntegrable(String),
    #[error(
        "CFL violation: dt * rate = {product:.6} exceeds safety factor {safety} (rate {rate:.6}, dt {dt:.6})"
    )]
    Cfl {
        dt: f64,
        rate: f64,
        product: f64,
        safety: f64,
    },
    #[error("non-finite update at t = {t}, node {node}, pair ({i},{j}) in term `{term}`")]
    NonFiniteUpdate {
        t: f64,
        node: usize,
        i: usize,
        j: usize,
        term: &'static str,
    },
    #[error("terminal data violates the switching-consistency condition by {magnitude:.6e}")]
    TerminalInconsistent { magnitude: f64 },
    #[error("obstacle sweeps did not converge within {sweeps} sweeps at t = {t} (worst residual {residual:.3e})")]
    SweepNonConvergence { t: f64, sweeps: usize, residual: f64 },
    #[error("penalty schedule did not converge: last gaps {last_gaps:?}, tolerance {tolerance:.3e}")]
    ScheduleNonConvergence { last_gaps: Vec<f64>, tolerance: f64 },
    #[error("singular regression at step {step}: condition estimate {condition:.3e}")]
    SingularRegression { step: usize, condition: f64 },
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn expr(context: impl Into<String>, source: ExprError) -> Self {
        Error::Expr {
            context: context.into(),
            source,
        }
    }
}
