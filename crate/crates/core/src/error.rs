use std::fmt;

use serde::{Deserialize, Serialize};

/// Actuator channel of the display.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    /// Solenoid valve metering the cold-air jet.
    Valve,
    /// Radiative LED array.
    Led,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::Valve => f.write_str("valve"),
            Channel::Led => f.write_str("led"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Validation(String),

    #[error("operation requires a {expected} stimulus, got {found}")]
    WrongKind { expected: &'static str, found: String },

    #[error("time step {0} s outside (0, 0.01]")]
    StepSize(f64),

    #[error("regression needs at least two distinct duty values")]
    DegenerateDesign,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(
        "{channel} cannot reach {target:.6} °C/s (feasible {min_rate:.6}..{max_rate:.6} °C/s){}",
        context.as_deref().map(|c| format!(" [{c}]")).unwrap_or_default()
    )]
    UnreachableRate {
        channel: Channel,
        target: f64,
        min_rate: f64,
        max_rate: f64,
        context: Option<String>,
    },

    #[error("calibration did not converge after {iterations} iterations; net ΔT per pattern {residuals:?}")]
    CalibrationFailure { iterations: usize, residuals: Vec<f64> },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Input-side failures (bad arguments, malformed files) as opposed to
    /// runtime failures of the simulation or calibration.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::WrongKind { .. }
                | Error::StepSize(_)
                | Error::DegenerateDesign
                | Error::Empty(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }

    /// Attach a location (segment index, stimulus id) to an unreachable-rate error.
    pub fn with_context(self, ctx: impl Into<String>) -> Self {
        match self {
            Error::UnreachableRate { channel, target, min_rate, max_rate, context } => {
                let ctx = ctx.into();
                let context = Some(match context {
                    Some(inner) => format!("{ctx}: {inner}"),
                    None => ctx,
                });
                Error::UnreachableRate { channel, target, min_rate, max_rate, context }
            }
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
