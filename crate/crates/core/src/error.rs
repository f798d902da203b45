use thiserror::Error;

/// Errors produced by the library. Each variant names the violated bound or
/// the offending input so callers can report it without extra context.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("infeasible schedule: {0}")]
    InfeasibleSchedule(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("class count mismatch: schedule covers {schedule} classes, dataset has {dataset}")]
    ClassCountMismatch { schedule: usize, dataset: usize },

    #[error("replay budget {budget} cannot hold one exemplar for each of {classes} classes")]
    BudgetTooSmall { budget: usize, classes: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("non-finite value in loss term `{term}`")]
    NonFiniteLoss { term: &'static str },

    #[error("distillation requested but no teacher outputs were supplied")]
    MissingTeacher,

    #[error("auxiliary loss requested but no auxiliary logits were supplied")]
    MissingAuxLogits,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate new-class head: mean row norm is zero")]
    DegenerateNewHead,

    #[error("forgetting is undefined for fewer than two steps (got {0})")]
    TooFewSteps(usize),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error at line {line}, key `{key}`: {message}")]
    Config {
        line: usize,
        key: String,
        message: String,
    },

    #[error("schema violation in {file}: {message}")]
    Schema { file: String, message: String },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Error {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
