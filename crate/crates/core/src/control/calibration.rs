//! Per-participant calibration of the duty models.
//!
//! 1. Record the baseline drift of the untouched skin.
//! 2. Hold single stimuli on the valve and LED duty grids for `delta_time`
//!    seconds each, reading the sensor before and after.
//! 3. Average repeats per duty and fit both channels by least squares.
//! 4. Render the verification patterns with the fitted models.
//! 5. Read the net temperature change of every pattern; done when all are
//!    inside the tolerance.
//! 6. Otherwise shift the warming rates by the mean drift rate, refit the
//!    warm channel and go back to 4.

use serde::{Deserialize, Serialize};

use crate::control::model::{
    apply_drift_correction, average_by_duty, fit_duty_model, CalibrationPoint, DutyModel, LED_DUTY_RANGE,
    VALVE_DUTY_RANGE,
};
use crate::control::runner::{run_control, DEFAULT_LOG_RATE_HZ};
use crate::control::timeline::{schedule_to_timeline, ChannelModels};
use crate::error::{Channel, Error, Result};
use crate::pattern::{compile_schedule, StimulusSpec};
use crate::plant::{Actuation, Plant, DEFAULT_DT_S, DEFAULT_SENSOR_RESOLUTION_C};

/// Protocol knobs. Defaults follow the measurement campaign the display was
/// designed around.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationProtocol {
    pub valve_grid: Vec<f64>,
    pub led_grid: Vec<f64>,
    /// Repeats at the lowest and highest duty of each grid.
    pub endpoint_repeats: usize,
    pub interior_repeats: usize,
    /// Single-stimulus hold time, s.
    pub delta_time: f64,
    pub valve_range: (f64, f64),
    pub led_range: (f64, f64),
    pub verification: Vec<StimulusSpec>,
    /// Largest acceptable |net ΔT| of a verification pattern, °C.
    pub tolerance: f64,
    pub max_iters: usize,
    /// Split the drift correction between both channels instead of
    /// putting all of it on the warm channel.
    pub symmetric_correction: bool,
    /// Sensor grid; `None` reads the skin node directly.
    pub sensor_resolution: Option<f64>,
    /// Idle time between the temperature reset and a measurement, s.
    pub dead_time: f64,
    pub dt: f64,
}

impl Default for CalibrationProtocol {
    fn default() -> Self {
        let verification = [-0.08, -0.16, -0.24]
            .into_iter()
            .flat_map(|rate| [0.1, 0.3].into_iter().map(move |ratio| StimulusSpec::alternating(rate, ratio)))
            .collect();
        CalibrationProtocol {
            valve_grid: vec![0.490, 0.514, 0.538, 0.561, 0.584, 0.601],
            led_grid: vec![0.118, 0.275, 0.431, 0.588, 0.745, 0.902],
            endpoint_repeats: 3,
            interior_repeats: 1,
            delta_time: 6.0,
            valve_range: VALVE_DUTY_RANGE,
            led_range: LED_DUTY_RANGE,
            verification,
            tolerance: 0.1,
            max_iters: 10,
            symmetric_correction: false,
            sensor_resolution: Some(DEFAULT_SENSOR_RESOLUTION_C),
            dead_time: 0.0,
            dt: DEFAULT_DT_S,
        }
    }
}

impl CalibrationProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.valve_grid.len() < 2 || self.led_grid.len() < 2 {
            return Err(Error::invalid("duty grids need at least two entries"));
        }
        if self.endpoint_repeats == 0 || self.interior_repeats == 0 {
            return Err(Error::invalid("repeat counts must be positive"));
        }
        if !(self.delta_time > 0.0) || !(self.tolerance > 0.0) || self.dead_time < 0.0 {
            return Err(Error::invalid("delta_time and tolerance must be positive, dead_time non-negative"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be positive"));
        }
        if matches!(self.sensor_resolution, Some(r) if !(r > 0.0)) {
            return Err(Error::invalid("sensor resolution must be positive"));
        }
        Ok(())
    }

    /// Duties in measurement order, endpoints repeated.
    fn schedule_for(&self, grid: &[f64]) -> Vec<f64> {
        let last = grid.len() - 1;
        grid.iter()
            .enumerate()
            .flat_map(|(i, &d)| {
                let n = if i == 0 || i == last { self.endpoint_repeats } else { self.interior_repeats };
                std::iter::repeat_n(d, n)
            })
            .collect()
    }

    fn read(&self, plant: &Plant) -> f64 {
        match self.sensor_resolution {
            Some(res) => plant.read_sensor(res).value(),
            None => plant.temperature(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub valve: DutyModel,
    pub led: DutyModel,
    /// Net ΔT of each verification pattern, in protocol order.
    pub net_deltas: Vec<f64>,
    pub passed: bool,
    /// Rate shift applied to the warming points after this iteration, °C/s.
    pub correction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOutcome {
    pub models: ChannelModels,
    pub iterations: usize,
    pub baseline_rate: f64,
    pub valve_points: Vec<CalibrationPoint>,
    pub led_points: Vec<CalibrationPoint>,
    pub history: Vec<IterationRecord>,
}

impl CalibrationOutcome {
    pub fn final_net_deltas(&self) -> &[f64] {
        self.history.last().map(|r| r.net_deltas.as_slice()).unwrap_or(&[])
    }
}

/// Reset, optionally idle, then hold `act` and return the sensed ΔT.
fn measure(plant: &mut Plant, protocol: &CalibrationProtocol, act: &Actuation) -> Result<f64> {
    plant.reset_temperature();
    if protocol.dead_time > 0.0 {
        plant.hold(&Actuation::OFF, protocol.dead_time, protocol.dt)?;
    }
    let before = protocol.read(plant);
    plant.hold(act, protocol.delta_time, protocol.dt)?;
    Ok(protocol.read(plant) - before)
}

/// Single-stimulus measurements on one channel's grid, one point per hold.
pub fn measure_channel(plant: &mut Plant, protocol: &CalibrationProtocol, channel: Channel) -> Result<Vec<CalibrationPoint>> {
    let grid = match channel {
        Channel::Valve => &protocol.valve_grid,
        Channel::Led => &protocol.led_grid,
    };
    protocol
        .schedule_for(grid)
        .into_iter()
        .map(|duty| {
            let act = match channel {
                Channel::Valve => Actuation::valve(duty),
                Channel::Led => Actuation::led(duty),
            };
            Ok(CalibrationPoint::new(duty, measure(plant, protocol, &act)?, protocol.delta_time))
        })
        .collect()
}

fn fit(points: &[CalibrationPoint], channel: Channel, range: (f64, f64)) -> Result<DutyModel> {
    fit_duty_model(&average_by_duty(points)?, channel)?.with_range(range.0, range.1)
}

/// Net sensed ΔT of each verification pattern under `models`.
pub fn verify(plant: &mut Plant, protocol: &CalibrationProtocol, models: &ChannelModels) -> Result<Vec<f64>> {
    protocol
        .verification
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let timeline = schedule_to_timeline(&compile_schedule(spec)?, models)
                .map_err(|e| e.with_context(format!("verification pattern {i}")))?;
            plant.reset_temperature();
            let before = protocol.read(plant);
            run_control(&timeline, plant, protocol.dt, DEFAULT_LOG_RATE_HZ)?;
            Ok(protocol.read(plant) - before)
        })
        .collect()
}

pub fn calibrate(plant: &mut Plant, protocol: &CalibrationProtocol) -> Result<CalibrationOutcome> {
    protocol.validate()?;

    let baseline_rate = measure(plant, protocol, &Actuation::OFF)? / protocol.delta_time;
    let mut valve_points = measure_channel(plant, protocol, Channel::Valve)?;
    let mut led_points = measure_channel(plant, protocol, Channel::Led)?;
    let mut models = ChannelModels {
        valve: fit(&valve_points, Channel::Valve, protocol.valve_range)?,
        led: fit(&led_points, Channel::Led, protocol.led_range)?,
    };

    let mean_duration = if protocol.verification.is_empty() {
        1.0
    } else {
        protocol.verification.iter().map(|s| s.duration).sum::<f64>() / protocol.verification.len() as f64
    };
    let mut history = Vec::new();

    for iteration in 1..=protocol.max_iters {
        let net_deltas = verify(plant, protocol, &models)?;
        let passed = net_deltas.iter().all(|d| d.abs() <= protocol.tolerance);
        history.push(IterationRecord { iteration, valve: models.valve, led: models.led, net_deltas, passed, correction: None });
        if passed {
            return Ok(CalibrationOutcome {
                models,
                iterations: iteration,
                baseline_rate,
                valve_points,
                led_points,
                history,
            });
        }
        if iteration == protocol.max_iters {
            break;
        }

        let record = history.last_mut().expect("just pushed");
        let net_drift = record.net_deltas.iter().sum::<f64>() / record.net_deltas.len() as f64;
        if protocol.symmetric_correction {
            led_points = apply_drift_correction(&led_points, net_drift / 2.0, mean_duration)?;
            valve_points = apply_drift_correction(&valve_points, net_drift / 2.0, mean_duration)?;
            models.valve = fit(&valve_points, Channel::Valve, protocol.valve_range)?;
        } else {
            led_points = apply_drift_correction(&led_points, net_drift, mean_duration)?;
        }
        models.led = fit(&led_points, Channel::Led, protocol.led_range)?;
        record.correction = Some(net_drift / mean_duration);
    }

    Err(Error::CalibrationFailure {
        iterations: protocol.max_iters,
        residuals: history.last().map(|r| r.net_deltas.clone()).unwrap_or_default(),
    })
}
