//! Affine duty-ratio to temperature-rate models and their regression fit.

use serde::{Deserialize, Serialize};

use crate::error::{Channel, Error, Result};
use crate::plant::PlantParams;

pub const VALVE_DUTY_RANGE: (f64, f64) = (0.490, 0.601);
pub const LED_DUTY_RANGE: (f64, f64) = (0.118, 0.902);

/// Slack allowed when an inverted duty lands just outside the range.
const RANGE_TOL: f64 = 1e-9;

pub fn default_duty_range(channel: Channel) -> (f64, f64) {
    match channel {
        Channel::Valve => VALVE_DUTY_RANGE,
        Channel::Led => LED_DUTY_RANGE,
    }
}

/// `rate = a * duty + b`, valid for duties in `[duty_min, duty_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DutyModel {
    pub channel: Channel,
    pub a: f64,
    pub b: f64,
    pub duty_min: f64,
    pub duty_max: f64,
    pub r_squared: f64,
}

impl DutyModel {
    pub fn new(channel: Channel, a: f64, b: f64) -> Self {
        let (duty_min, duty_max) = default_duty_range(channel);
        DutyModel { channel, a, b, duty_min, duty_max, r_squared: 1.0 }
    }

    /// The model that matches a plant's hidden truth exactly (ignoring relaxation).
    pub fn exact(channel: Channel, params: &PlantParams) -> Self {
        match channel {
            Channel::Valve => Self::new(channel, params.a_v_true, params.b_v_true),
            Channel::Led => Self::new(channel, params.a_l_true, params.b_l_true),
        }
    }

    pub fn with_range(mut self, duty_min: f64, duty_max: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&duty_min) || !(0.0..=1.0).contains(&duty_max) || duty_min >= duty_max {
            return Err(Error::invalid(format!("duty range [{duty_min}, {duty_max}] is not a proper subrange of [0, 1]")));
        }
        self.duty_min = duty_min;
        self.duty_max = duty_max;
        Ok(self)
    }

    pub fn rate_at(&self, duty: f64) -> f64 {
        self.a * duty + self.b
    }

    /// `(lowest, highest)` rate reachable inside the duty range.
    pub fn rate_range(&self) -> (f64, f64) {
        let (r0, r1) = (self.rate_at(self.duty_min), self.rate_at(self.duty_max));
        (r0.min(r1), r0.max(r1))
    }

    /// Duty that produces `target` °C/s.
    pub fn invert(&self, target: f64) -> Result<f64> {
        if self.a == 0.0 || !self.a.is_finite() {
            return Err(Error::invalid(format!("{} model has zero slope", self.channel)));
        }
        let duty = (target - self.b) / self.a;
        if !(duty >= self.duty_min - RANGE_TOL && duty <= self.duty_max + RANGE_TOL) {
            let (min_rate, max_rate) = self.rate_range();
            return Err(Error::UnreachableRate { channel: self.channel, target, min_rate, max_rate, context: None });
        }
        Ok(duty.clamp(self.duty_min, self.duty_max))
    }
}

/// One single-stimulus measurement: a duty held for `delta_time` seconds
/// changed the skin temperature by `delta_temp`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub duty: f64,
    pub delta_temp: f64,
    pub delta_time: f64,
    pub rate: f64,
}

impl CalibrationPoint {
    pub fn new(duty: f64, delta_temp: f64, delta_time: f64) -> Self {
        CalibrationPoint { duty, delta_temp, delta_time, rate: delta_temp / delta_time }
    }

    pub fn from_rate(duty: f64, rate: f64, delta_time: f64) -> Self {
        CalibrationPoint { duty, delta_temp: rate * delta_time, delta_time, rate }
    }
}

/// Average rate of repeated measurements at one duty.
pub fn mean_rate(points: &[CalibrationPoint]) -> Result<f64> {
    let first = points.first().ok_or(Error::Empty("no measurements"))?;
    if points.iter().any(|p| p.duty != first.duty || p.delta_time != first.delta_time) {
        return Err(Error::invalid("measurements must share duty and duration"));
    }
    Ok(points.iter().map(|p| p.delta_temp / p.delta_time).sum::<f64>() / points.len() as f64)
}

/// Collapse repeated measurements into one averaged point per duty, in first-seen order.
pub fn average_by_duty(points: &[CalibrationPoint]) -> Result<Vec<CalibrationPoint>> {
    let mut duties: Vec<f64> = Vec::new();
    for p in points {
        if !duties.contains(&p.duty) {
            duties.push(p.duty);
        }
    }
    duties
        .into_iter()
        .map(|duty| {
            let group: Vec<_> = points.iter().copied().filter(|p| p.duty == duty).collect();
            Ok(CalibrationPoint::from_rate(duty, mean_rate(&group)?, group[0].delta_time))
        })
        .collect()
}

/// Ordinary least squares of rate on duty.
pub fn fit_duty_model(points: &[CalibrationPoint], channel: Channel) -> Result<DutyModel> {
    let n = points.len();
    if n < 2 || points.iter().all(|p| p.duty == points[0].duty) {
        return Err(Error::DegenerateDesign);
    }
    let nf = n as f64;
    let mean_x = points.iter().map(|p| p.duty).sum::<f64>() / nf;
    let mean_y = points.iter().map(|p| p.rate).sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p.duty - mean_x, p.rate - mean_y);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let a = sxy / sxx;
    let b = mean_y - a * mean_x;
    let ss_res: f64 = points.iter().map(|p| (p.rate - (a * p.duty + b)).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(DutyModel { r_squared, ..DutyModel::new(channel, a, b) })
}

/// Shift every point's rate by the drift rate observed over a presentation.
/// The caller refits afterwards.
pub fn apply_drift_correction(points: &[CalibrationPoint], net_drift: f64, duration: f64) -> Result<Vec<CalibrationPoint>> {
    if !(duration > 0.0) {
        return Err(Error::invalid("drift duration must be positive"));
    }
    let shift = net_drift / duration;
    Ok(points.iter().map(|p| CalibrationPoint::from_rate(p.duty, p.rate + shift, p.delta_time)).collect())
}
