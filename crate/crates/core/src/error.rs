use thiserror::Error;

/// Errors raised by the analysis and construction routines.
///
/// A mechanism that fails incentive compatibility is *not* an error; verdicts
/// and certificates carry that outcome. These variants cover malformed input
/// and problems that have no answer (infeasible constraints, caps, ...).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("evaluation failed at node {node}: {reason}")]
    Evaluation { node: usize, reason: String },

    #[error("expression error: {0}")]
    Expression(String),

    #[error("no strategy meets the ex-ante constraint: best achievable {best} < level {level}")]
    Infeasible { best: f64, level: f64 },

    #[error("multiplier bracket exhausted at {max}: constraint value {achieved} still below {level}")]
    UnboundedMultiplier { max: f64, achieved: f64, level: f64 },

    #[error("enumeration needs {candidates:e} candidate maps, cap is {cap:e}")]
    CapExceeded { candidates: f64, cap: f64 },

    #[error("outcome {outcome} carries inconsistent prices {low} and {high}")]
    InconsistentPrice { outcome: usize, low: f64, high: f64 },

    #[error("degenerate payment scaling c1 + r*c2 = {0}")]
    DegenerateScaling(f64),

    #[error("player model has no linear form")]
    MissingLinearForm,

    #[error("linear form disagrees with the payoff functions by {deviation:e}")]
    LinearFormMismatch { deviation: f64 },

    #[error("path integrals disagree by {discrepancy:e} (tolerance {tolerance:e}); the field is not integrable")]
    PathDiscrepancy { discrepancy: f64, tolerance: f64 },

    #[error("cannot bind exactly: payoffs are not affine in the outcome at node {node}")]
    NonAffineMixing { node: usize },

    #[error("io: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Io(err.to_string())
    }
}
