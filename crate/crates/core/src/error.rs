use thiserror::Error;

/// Errors raised while validating configuration, before any stepping starts.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("scenario file error: {0}")]
    ScenarioFile(String),
}

impl ConfigError {
    pub fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field,
            reason: reason.into(),
        }
    }
}

/// Errors raised during simulation or training.
#[derive(Debug, Error)]
pub enum SimError {
    /// A hard state invariant was violated (e.g. overlapping vehicles).
    /// The episode must be aborted; the message carries diagnostics.
    #[error("simulation fault at t={time:.2}s: {detail}")]
    Fault { time: f64, detail: String },
    #[error("non-finite input to {op}: {detail}")]
    NonFinite { op: &'static str, detail: String },
    /// Requested speed is at or above the desired speed; the equilibrium
    /// gap diverges in free flow.
    #[error("no equilibrium at v={v} m/s (free-flow limit v0={v0} m/s)")]
    FreeFlowLimit { v: f64, v0: f64 },
    #[error("time step {dt}s violates the CFL bound; admissible dt={admissible}s")]
    CflViolation { dt: f64, admissible: f64 },
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("training fault: {0}")]
    Training(String),
}
