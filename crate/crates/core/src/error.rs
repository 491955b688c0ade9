use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what}: expected length {expected}, got {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("substep {dt} exceeds the admissible bound {bound} (max |y| = {max_speed})")]
    Cfl { dt: f64, bound: f64, max_speed: f64 },

    #[error("plant step failed in episode {episode} at step {step}: {source}")]
    PlantStep {
        episode: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("control {u} outside covered interval [{lo}, {hi}]")]
    OutOfRange { u: f64, lo: f64, hi: f64 },

    #[error("unknown control label {0}")]
    UnknownLabel(f64),

    #[error("models are incompatible: {0}")]
    Incompatible(String),

    #[error("enumeration needs {needed} sequences, budget is {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
