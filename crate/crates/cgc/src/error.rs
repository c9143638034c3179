//! Crate-wide error type.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong in the library.
///
/// Variants are grouped roughly by module; the CLI maps them onto exit codes
/// (artifact problems versus numeric failures), so new variants should keep
/// that split in mind.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("need at least {min} samples for {what}, got {got}")]
    TooFewSamples {
        what: &'static str,
        min: usize,
        got: usize,
    },

    #[error("zero variance in {what}; correlation is undefined")]
    ZeroVariance { what: &'static str },

    #[error("exact permutation test is limited to n <= {max}, got {got}")]
    PermutationTooLarge { max: usize, got: usize },

    #[error("corpus too short: need {need} tokens, have {have}")]
    CorpusTooShort { need: usize, have: usize },

    #[error("token {token} out of range for vocab size {vocab}")]
    TokenOutOfRange { token: u16, vocab: usize },

    #[error("non-finite {what} at step {step}; aborting")]
    NonFinite { what: &'static str, step: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid ratio {value}; must lie in [0, 1]")]
    InvalidRatio { value: f64 },

    #[error("component {0} missing from {1}")]
    MissingComponent(String, &'static str),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("need at least {min} categories for consistency, got {got}")]
    TooFewCategories { min: usize, got: usize },

    #[error("infeasible allocation: {0}")]
    Infeasible(String),

    #[error("artifact format error: {0}")]
    Format(String),

    #[error("stale artifact: {0}")]
    Stale(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
