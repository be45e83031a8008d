use bnshare_core::ModelError;
use thiserror::Error;

pub type Result<T, E = ProtocolError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error(transparent)]
    Model(#[from] ModelError),

    #[error("no route to party `{0}`")]
    Routing(String),

    #[error("wire format: {0}")]
    Wire(String),

    #[error("unexpected message: {0}")]
    Unexpected(String),

    #[error("party `{party}` refused the request: {reason}")]
    Refused { party: String, reason: String },

    #[error("private set intersection aborted: {0}")]
    Psi(String),

    #[error("degenerate overlap `{0}`: zero normalization constant")]
    DegenerateOverlap(String),

    #[error("invalid field element {0}")]
    FieldElement(u64),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("exposure of `{0}` needs the consent of every holder")]
    Consent(String),

    #[error("transport: {0}")]
    Transport(String),
}
