//! Error type shared by every layer of the library.

use thiserror::Error;

/// Library-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Matrix/vector dimensions do not match the operation's contract.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: String,
        actual: String,
    },

    /// An input contained NaN or infinity.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// A tolerance or order argument lies outside its valid range.
    #[error("invalid argument for {context}: {reason}")]
    InvalidArgument { context: String, reason: String },

    /// Leading jet coefficient too close to zero for a reciprocal.
    #[error("jet reciprocal of a series with leading coefficient {value:.3e} (singular)")]
    JetSingular { value: f64 },

    /// A jet of higher order than available was requested.
    #[error("jet order {available} available but {needed} needed in {context}")]
    InsufficientJetOrder {
        context: String,
        needed: usize,
        available: usize,
    },

    /// A matrix that must be invertible or of known rank is rank deficient.
    #[error("rank deficiency: {context} at t = {time}")]
    RankDeficient { context: String, time: f64 },

    /// No strict relative degree exists for the plant.
    #[error("no strict relative degree: {reason}")]
    NoRelativeDegree { reason: String },

    /// The transformed system violates the expected block layout.
    #[error(
        "normal-form structure check failed: block {block} has residual {residual:.3e} \
         (tolerance {tolerance:.3e})"
    )]
    StructureViolation {
        block: String,
        residual: f64,
        tolerance: f64,
    },

    /// No feasible controller weight exists (image-inclusion condition violated).
    #[error("no feasible weight: {reason} at t = {time}")]
    WeightInfeasible { reason: String, time: f64 },

    /// A tracking error touched its funnel boundary.
    #[error("funnel violation at t = {time}: level {level} margin {margin:.12} >= 1")]
    FunnelViolation { time: f64, level: usize, margin: f64 },

    /// Adaptive step size shrank below the representable floor.
    #[error("integration stalled at t = {time}: step {step:.3e} below floor")]
    IntegrationStalled { time: f64, step: f64 },

    /// Scenario failed validation.
    #[error("scenario error at {path}: {message}")]
    Scenario { path: String, message: String },

    /// Input file could not be read or parsed.
    #[error("input error: {0}")]
    Input(String),
}

impl Error {
    /// Convenience constructor for dimension errors.
    pub fn dimension(context: &str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            context: context.to_string(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Convenience constructor for scenario validation errors.
    pub fn scenario(path: &str, message: impl ToString) -> Self {
        Error::Scenario {
            path: path.to_string(),
            message: message.to_string(),
        }
    }
}
