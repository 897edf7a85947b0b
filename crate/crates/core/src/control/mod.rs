//! Duty models, calibration, schedule rendering, PWM and the control loop.

pub mod calibration;
pub mod model;
pub mod pwm;
pub mod runner;
pub mod timeline;

use serde::{Deserialize, Serialize};

pub use calibration::{calibrate, CalibrationOutcome, CalibrationProtocol};
pub use model::{apply_drift_correction, fit_duty_model, mean_rate, CalibrationPoint, DutyModel};
pub use pwm::{pwm_waveform, PwmWaveform};
pub use runner::{run_control, ControlRun};
pub use timeline::{schedule_to_timeline, ActuatorTimeline, ChannelModels};

/// Provenance stored alongside each fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMeta {
    pub grid: Vec<f64>,
    pub delta_t: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    #[serde(flatten)]
    pub model: DutyModel,
    pub calibration: CalibrationMeta,
}

/// JSON model file holding both channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub valve: ModelEntry,
    pub led: ModelEntry,
}

impl ModelFile {
    pub fn from_outcome(outcome: &CalibrationOutcome, protocol: &CalibrationProtocol) -> Self {
        let entry = |model: DutyModel, grid: &[f64]| ModelEntry {
            model,
            calibration: CalibrationMeta {
                grid: grid.to_vec(),
                delta_t: protocol.delta_time,
                iterations: outcome.iterations,
            },
        };
        ModelFile {
            valve: entry(outcome.models.valve, &protocol.valve_grid),
            led: entry(outcome.models.led, &protocol.led_grid),
        }
    }

    pub fn models(&self) -> ChannelModels {
        ChannelModels { valve: self.valve.model, led: self.led.model }
    }
}
