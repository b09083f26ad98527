//! Error type shared across the crate.

use core::fmt;

/// Failure modes of the models, optimizers and simulator.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// An argument fell outside the operation's domain.
    Domain(&'static str),
    /// Configuration or parameter validation failed.
    InvalidConfig(&'static str),
    /// A planned battery draw would push the stored energy negative.
    BatteryDepleted,
    /// No feasible allocation exists for the given queue and deadlines.
    Infeasible(&'static str),
    /// Two schedules that must share a horizon do not.
    HorizonMismatch { expected: usize, got: usize },
    /// A serialized network checkpoint could not be decoded.
    BadCheckpoint(&'static str),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::Domain(msg) => write!(f, "domain error: {msg}"),
            CoreError::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            CoreError::BatteryDepleted => write!(f, "battery depleted"),
            CoreError::Infeasible(msg) => write!(f, "infeasible: {msg}"),
            CoreError::HorizonMismatch { expected, got } => {
                write!(f, "horizon mismatch: expected {expected} slots, got {got}")
            }
            CoreError::BadCheckpoint(msg) => write!(f, "bad checkpoint: {msg}"),
        }
    }
}

impl core::error::Error for CoreError {}
