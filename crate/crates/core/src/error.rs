use thiserror::Error;

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Errors raised by the model, factor algebra, fusion and partitioning code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid variable `{name}`: {reason}")]
    InvalidVariable { name: String, reason: String },

    #[error("variable `{0}` has mismatching state lists across operands")]
    Alignment(String),

    #[error("variable `{0}` is not in scope")]
    Scope(String),

    #[error("unknown state `{state}` for variable `{variable}`")]
    Assignment { variable: String, state: String },

    #[error("invalid factor: {0}")]
    InvalidFactor(String),

    #[error("invalid CPD for `{child}`: {reason}")]
    InvalidCpd { child: String, reason: String },

    #[error("degenerate distribution: column {column} of `{child}` sums to zero")]
    Degenerate { child: String, column: usize },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("directed cycle through `{0}`")]
    Cycle(String),

    #[error("variable `{0}` has incompatible state lists across models")]
    IncompatibleStates(String),

    #[error("evidence has zero probability")]
    ImpossibleEvidence,

    #[error("variable `{0}` is both a target and evidence")]
    TargetIsEvidence(String),

    #[error("{0}")]
    Invalid(String),
}
