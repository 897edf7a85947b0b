use serde::{Deserialize, Serialize};

use crate::control::timeline::ActuatorTimeline;
use crate::error::{Channel, Error, Result};
use crate::plant::{Actuation, Plant, TraceSample};

pub const DEFAULT_LOG_RATE_HZ: f64 = 100.0;

/// Boundaries closer than this are treated as the same instant.
const TIME_EPS: f64 = 1e-12;

/// Result of driving the plant through one timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlRun {
    /// Samples at the start of each logging interval, times relative to the run.
    pub samples: Vec<TraceSample>,
    pub start_temp: f64,
    pub end_temp: f64,
}

impl ControlRun {
    pub fn net_delta(&self) -> f64 {
        self.end_temp - self.start_temp
    }

    pub fn temperatures(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.temp).collect()
    }
}

fn actuation_at(timeline: &ActuatorTimeline, t: f64) -> Actuation {
    let mut act = Actuation::OFF;
    if let Some(e) = timeline.entry_at(Channel::Valve, t) {
        act.duty_valve = e.duty;
        act.valve_on = e.active;
    }
    if let Some(e) = timeline.entry_at(Channel::Led, t) {
        act.duty_led = e.duty;
        act.led_on = e.active;
    }
    act
}

/// Step the plant through a timeline on a fixed `dt` grid. A step that
/// straddles a command boundary is split there, so boundaries need not fall
/// on the grid.
pub fn run_control(timeline: &ActuatorTimeline, plant: &mut Plant, dt: f64, log_rate: f64) -> Result<ControlRun> {
    if !(dt > 0.0) {
        return Err(Error::StepSize(dt));
    }
    if !(log_rate > 0.0) {
        return Err(Error::invalid("log rate must be positive"));
    }
    let log_every = 1.0 / (log_rate * dt);
    if (log_every - log_every.round()).abs() > 1e-6 || log_every.round() < 1.0 {
        return Err(Error::invalid(format!("log interval {} s is not a multiple of dt {dt} s", 1.0 / log_rate)));
    }
    let log_every = log_every.round() as usize;

    let mut boundaries: Vec<f64> = timeline
        .valve
        .iter()
        .chain(&timeline.led)
        .flat_map(|e| [e.start, e.end])
        .filter(|&t| t > 0.0 && t < timeline.duration)
        .collect();
    boundaries.sort_by(f64::total_cmp);
    boundaries.dedup_by(|a, b| (*a - *b).abs() < TIME_EPS);

    let steps = (timeline.duration / dt).round() as usize;
    let start_temp = plant.temperature();
    let mut samples = Vec::with_capacity(steps / log_every + 1);
    let mut next_boundary = 0;

    for k in 0..steps {
        let t0 = k as f64 * dt;
        let t1 = if k + 1 == steps { timeline.duration } else { (k + 1) as f64 * dt };
        if k % log_every == 0 {
            let act = actuation_at(timeline, t0 + TIME_EPS);
            samples.push(TraceSample {
                time: t0,
                temp: plant.temperature(),
                duty_valve: act.duty_valve,
                duty_led: act.duty_led,
                valve_on: act.valve_on,
                led_on: act.led_on,
            });
        }
        let mut t = t0;
        while t1 - t > TIME_EPS {
            while next_boundary < boundaries.len() && boundaries[next_boundary] <= t + TIME_EPS {
                next_boundary += 1;
            }
            let end = match boundaries.get(next_boundary) {
                Some(&b) if b < t1 - TIME_EPS => b,
                _ => t1,
            };
            let act = actuation_at(timeline, 0.5 * (t + end));
            plant.step(&act, end - t)?;
            t = end;
        }
    }
    Ok(ControlRun { samples, start_temp, end_temp: plant.temperature() })
}
