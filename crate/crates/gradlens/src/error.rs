//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot normalize a zero vector (norm {norm:.3e})")]
    ZeroVector { norm: f64 },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("angle {0} outside [0, pi]")]
    InvalidAngle(f64),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("invalid parameters for {kind}: {reason}")]
    InvalidParams { kind: &'static str, reason: String },
    #[error("components do not match the batch shape: {0}")]
    ShapeMismatch(String),
    #[error("{0} is not supported for this operation")]
    UnsupportedKind(&'static str),
    #[error("infeasible geometry: lambda*sin(theta_neg)*sin(alpha) exceeds sin(theta_pos) (radicand {radicand:.3e})")]
    InfeasibleGeometry { radicand: f64 },
    #[error("no step ratio in [{lo}, {hi}] satisfies the distance condition")]
    NoSolution { lo: f64, hi: f64 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("missing paired variant: {0}")]
    MissingVariant(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
