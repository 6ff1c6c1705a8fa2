use alloc::string::String;

use crate::types::RepresentationKind;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("sample {sample}: no observations")]
    EmptySample { sample: String },
    #[error("sample {sample}: duplicate observation of variable {variable} at t={timestamp}")]
    DuplicateObservation {
        sample: String,
        timestamp: f64,
        variable: usize,
    },
    #[error("sample {sample}: invalid observation: {reason}")]
    InvalidObservation { sample: String, reason: String },
    #[error("invalid scale stack: {0}")]
    InvalidScaleStack(String),
    #[error("scale level {level} out of range (stack has {levels} levels)")]
    LevelOutOfRange { level: usize, levels: usize },
    #[error("representation at level {level}: no lower level")]
    NoLowerLevel { level: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("representation kind mismatch: expected {expected:?}, found {found:?}")]
    KindMismatch {
        expected: RepresentationKind,
        found: RepresentationKind,
    },
    #[error("invalid forecast query: {0}")]
    InvalidQuery(String),
    #[error("no forecast targets")]
    NoForecastTargets,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
}
