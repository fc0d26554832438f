use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value encountered while integrating {what} at t = {t}")]
    NonFiniteState { what: &'static str, t: f64 },

    #[error("Riccati solution escaped (|K| = {norm:.3e} at t = {t}); horizon and weights are incompatible")]
    FiniteEscape { t: f64, norm: f64 },

    #[error("frozen linear system is not controllable: cond = {cond:.3e}")]
    NotControllable { cond: f64 },

    #[error("time {t} outside [0, {tf}]")]
    OutOfRange { t: f64, tf: f64 },

    #[error("initial trajectory misses the boundary conditions by {defect:.3e}")]
    BadInitialTrajectory { defect: f64 },

    #[error("invalid {what}: {reason}")]
    InvalidInput { what: &'static str, reason: String },

    #[error("bad parameter specification: {0}")]
    BadSpec(String),

    #[error("no convergence after {iterations} iterations (terminal error {terminal_error:.3e})")]
    NotConverged {
        iterations: usize,
        terminal_error: f64,
    },

    #[error("iteration diverged at k = {iteration}: state differences grew for {patience} consecutive iterations; try increasing R")]
    Diverged { iteration: usize, patience: usize },

    #[error("target not reachable: relative residual {relative_residual:.3e} outside the numerical range")]
    TargetNotReachable { relative_residual: f64 },

    #[error("shooting oracle failed after {iterations} Newton steps (defect {defect:.3e})")]
    OracleDiverged { iterations: usize, defect: f64 },

    #[error("state dimension {n} exceeds the oracle limit of {max}")]
    DimensionTooLarge { n: usize, max: usize },

    #[error("iteration {k}: {source}")]
    AtIteration {
        k: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn at_iteration(self, k: usize) -> Self {
        match self {
            e @ Error::AtIteration { .. } => e,
            e => Error::AtIteration {
                k,
                source: Box::new(e),
            },
        }
    }

    /// The underlying error with any iteration tag removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtIteration { source, .. } => source.root(),
            e => e,
        }
    }
}
