//! Virtual hardware: a lumped skin node driven by the cold-air jet and the
//! LED array, a quantizing thermographic sensor, and the geometry of the
//! presentation head.
//!
//! The skin node lives in rate space. Each actuator contributes an affine
//! duty-to-rate response while it is on, and the node relaxes toward a
//! neutral temperature:
//!
//! ```text
//! dT/dt = valve_on (a_v D_v + b_v) + led_on (a_l D_l + b_l)
//!       + valve_on led_on bias + k (T_neutral - T) + eta
//! ```
//!
//! The defaults are simulator choices anchored to usable rate ranges, not
//! physiological constants.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DT_S: f64 = 1e-3;
pub const MAX_DT_S: f64 = 0.01;
pub const DEFAULT_SENSOR_RESOLUTION_C: f64 = 0.025;

/// Hidden ground truth of a simulated participant's skin and hardware.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantParams {
    /// Valve response slope, °C/s per unit duty. Negative.
    pub a_v_true: f64,
    pub b_v_true: f64,
    /// LED response slope, °C/s per unit duty. Positive.
    pub a_l_true: f64,
    pub b_l_true: f64,
    /// Extra rate while both channels run together, °C/s. Invisible to
    /// single-channel measurements.
    pub combined_bias: f64,
    /// Pull toward `t_neutral`, 1/s.
    pub relax_coeff: f64,
    pub t_neutral: f64,
    pub t_init: f64,
    /// Std of the white process noise on the rate, °C/s.
    pub noise_sigma: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        // valve 0.490 -> -0.05, 0.601 -> -0.30; LED 0.118 -> 0.02, 0.902 -> 0.50
        PlantParams {
            a_v_true: -2.252,
            b_v_true: 1.0535,
            a_l_true: 0.6122,
            b_l_true: -0.0522,
            combined_bias: 0.0,
            relax_coeff: 0.002,
            t_neutral: 24.0,
            t_init: 33.0,
            noise_sigma: 0.0,
        }
    }
}

impl PlantParams {
    /// Purely affine plant: no relaxation, no noise.
    pub fn affine() -> Self {
        PlantParams { relax_coeff: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.a_v_true,
            self.b_v_true,
            self.a_l_true,
            self.b_l_true,
            self.combined_bias,
            self.relax_coeff,
            self.t_neutral,
            self.t_init,
            self.noise_sigma,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("plant parameters must be finite"));
        }
        if !(self.a_v_true < 0.0) {
            return Err(Error::invalid("a_v_true must be negative"));
        }
        if !(self.a_l_true > 0.0) {
            return Err(Error::invalid("a_l_true must be positive"));
        }
        if self.relax_coeff < 0.0 {
            return Err(Error::invalid("relax_coeff must be non-negative"));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::invalid("noise_sigma must be non-negative"));
        }
        Ok(())
    }

    /// True response of one channel at a duty, excluding relaxation.
    pub fn channel_rate(&self, channel: crate::Channel, duty: f64) -> f64 {
        match channel {
            crate::Channel::Valve => self.a_v_true * duty + self.b_v_true,
            crate::Channel::Led => self.a_l_true * duty + self.b_l_true,
        }
    }
}

/// Descriptive constants of the physical rig. Recorded in configs, unused by
/// the lumped dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigConstants {
    pub air_pressure_mpa: f64,
    pub cold_air_ratio: f64,
    pub cold_air_temp_c: f64,
    pub ambient_c: f64,
    pub led_lens_fwhm_deg: f64,
}

impl Default for RigConstants {
    fn default() -> Self {
        RigConstants {
            air_pressure_mpa: 0.6,
            cold_air_ratio: 0.75,
            cold_air_temp_c: 0.0,
            ambient_c: 24.0,
            led_lens_fwhm_deg: 28.0,
        }
    }
}

/// On-disk plant configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantConfig {
    #[serde(flatten)]
    pub params: PlantParams,
    pub sensor_resolution: f64,
    #[serde(flatten)]
    pub rig: RigConstants,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            params: PlantParams::default(),
            sensor_resolution: DEFAULT_SENSOR_RESOLUTION_C,
            rig: RigConstants::default(),
        }
    }
}

/// Duty and on/off command for both channels over one step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Actuation {
    pub duty_valve: f64,
    pub duty_led: f64,
    pub valve_on: bool,
    pub led_on: bool,
}

impl Actuation {
    pub const OFF: Actuation = Actuation { duty_valve: 0.0, duty_led: 0.0, valve_on: false, led_on: false };

    pub fn valve(duty: f64) -> Self {
        Actuation { duty_valve: duty, valve_on: true, ..Self::OFF }
    }

    pub fn led(duty: f64) -> Self {
        Actuation { duty_led: duty, led_on: true, ..Self::OFF }
    }

    fn validate(&self) -> Result<()> {
        for (name, d) in [("valve", self.duty_valve), ("led", self.duty_led)] {
            if !(0.0..=1.0).contains(&d) {
                return Err(Error::invalid(format!("{name} duty {d} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PlantState {
    pub temp: f64,
    pub time: f64,
    rng: ChaCha8Rng,
}

impl PlantState {
    pub fn new(temp: f64, seed: u64) -> Self {
        PlantState { temp, time: 0.0, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

/// A single-owner skin node.
#[derive(Debug, Clone)]
pub struct Plant {
    params: PlantParams,
    state: PlantState,
}

impl Plant {
    pub fn new(params: PlantParams, seed: u64) -> Result<Self> {
        params.validate()?;
        Ok(Plant { state: PlantState::new(params.t_init, seed), params })
    }

    pub fn params(&self) -> &PlantParams {
        &self.params
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    pub fn temperature(&self) -> f64 {
        self.state.temp
    }

    pub fn time(&self) -> f64 {
        self.state.time
    }

    /// Put the skin back at its initialized temperature (the hot-plate step).
    /// Time keeps running.
    pub fn reset_temperature(&mut self) {
        self.state.temp = self.params.t_init;
    }

    /// Fresh state for an independent run.
    pub fn reseed(&mut self, seed: u64) {
        self.state = PlantState::new(self.params.t_init, seed);
    }

    /// Deterministic part of dT/dt under an actuation.
    pub fn rate(&self, act: &Actuation) -> f64 {
        let p = &self.params;
        let mut rate = p.relax_coeff * (p.t_neutral - self.state.temp);
        if act.valve_on {
            rate += p.a_v_true * act.duty_valve + p.b_v_true;
        }
        if act.led_on {
            rate += p.a_l_true * act.duty_led + p.b_l_true;
        }
        if act.valve_on && act.led_on {
            rate += p.combined_bias;
        }
        rate
    }

    /// Advance one explicit Euler step.
    pub fn step(&mut self, act: &Actuation, dt: f64) -> Result<()> {
        if !(dt > 0.0 && dt <= MAX_DT_S) {
            return Err(Error::StepSize(dt));
        }
        act.validate()?;
        let mut rate = self.rate(act);
        if self.params.noise_sigma > 0.0 {
            let noise = Normal::new(0.0, self.params.noise_sigma).expect("sigma validated");
            rate += noise.sample(&mut self.state.rng);
        }
        self.state.temp += dt * rate;
        self.state.time += dt;
        Ok(())
    }

    /// Hold an actuation for `duration` seconds in steps of at most `dt`.
    pub fn hold(&mut self, act: &Actuation, duration: f64, dt: f64) -> Result<()> {
        let steps = (duration / dt).round() as usize;
        for _ in 0..steps {
            self.step(act, dt)?;
        }
        Ok(())
    }

    pub fn read_sensor(&self, resolution: f64) -> SensorReading {
        SensorReading::quantize(self.state.temp, resolution)
    }
}

/// Temperature snapped to the sensor grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    /// Value in units of `resolution`.
    pub steps: i64,
    pub resolution: f64,
}

impl SensorReading {
    /// Nearest multiple of `resolution`; exact ties round away from zero.
    pub fn quantize(temp: f64, resolution: f64) -> Self {
        assert!(resolution > 0.0, "sensor resolution must be positive");
        let q = temp / resolution;
        let floor = q.floor();
        let frac = q - floor;
        // a tie that landed a few ulps off 0.5 after the division is still a tie
        let steps = if (frac - 0.5).abs() < 1e-9 {
            if q >= 0.0 { floor + 1.0 } else { floor }
        } else {
            q.round()
        };
        SensorReading { steps: steps as i64, resolution }
    }

    pub fn value(&self) -> f64 {
        self.steps as f64 * self.resolution
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ring {
    Inner,
    Outer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingSpec {
    pub count: usize,
    pub angle_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedEntry {
    pub ring: Ring,
    /// Position of the LED around its ring, 0-based.
    pub index: usize,
    pub angle_deg: f64,
    pub x: f64,
    pub y: f64,
}

/// LEDs sit on a hemisphere centred on the stimulated skin spot, each aimed
/// at the centre; `(x, y)` is the in-plane position for a tilt `angle_deg`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedLayout {
    pub radius: f64,
    pub entries: Vec<LedEntry>,
    pub nozzle_diameter: f64,
    pub nozzle_distance: f64,
}

pub const NOZZLE_DIAMETER_MM: f64 = 6.0;
/// Jet outlet to skin distance in outlet diameters.
pub const NOZZLE_DISTANCE_DIAMETERS: f64 = 7.0;

pub fn led_position(radius: f64, angle_deg: f64) -> (f64, f64) {
    let theta = angle_deg.to_radians();
    (radius * theta.cos(), radius * theta.sin())
}

pub fn led_positions(radius: f64, inner: RingSpec, outer: RingSpec) -> Result<LedLayout> {
    if !(radius > 0.0) {
        return Err(Error::invalid("radius must be positive"));
    }
    let mut entries = Vec::with_capacity(inner.count + outer.count);
    for (ring, spec) in [(Ring::Inner, inner), (Ring::Outer, outer)] {
        if !(0.0..=90.0).contains(&spec.angle_deg) {
            return Err(Error::invalid(format!("{ring:?} ring angle {} outside [0, 90] degrees", spec.angle_deg)));
        }
        let (x, y) = led_position(radius, spec.angle_deg);
        entries.extend((0..spec.count).map(|index| LedEntry { ring, index, angle_deg: spec.angle_deg, x, y }));
    }
    Ok(LedLayout {
        radius,
        entries,
        nozzle_diameter: NOZZLE_DIAMETER_MM,
        nozzle_distance: NOZZLE_DISTANCE_DIAMETERS * NOZZLE_DIAMETER_MM,
    })
}

/// The as-built head: 60 mm hemisphere, 6 LEDs at 20.5° and 12 at 45°.
pub fn default_layout() -> LedLayout {
    led_positions(60.0, RingSpec { count: 6, angle_deg: 20.5 }, RingSpec { count: 12, angle_deg: 45.0 })
        .expect("default layout is valid")
}

/// One logged sample of a simulated run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    #[serde(rename = "time_s")]
    pub time: f64,
    #[serde(rename = "temp_c")]
    pub temp: f64,
    pub duty_valve: f64,
    pub duty_led: f64,
    pub valve_on: bool,
    pub led_on: bool,
}

pub fn write_trace_csv<W: Write>(samples: &[TraceSample], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if samples.is_empty() {
        out.write_record(["time_s", "temp_c", "duty_valve", "duty_led", "valve_on", "led_on"])?;
    }
    for s in samples {
        out.serialize(s)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn neutral_is_a_fixed_point() {
        let params = PlantParams { t_init: 24.0, ..PlantParams::default() };
        let mut plant = Plant::new(params, 0).unwrap();
        plant.hold(&Actuation::OFF, 2.0, DEFAULT_DT_S).unwrap();
        assert_eq!(plant.temperature(), 24.0);
        assert_relative_eq!(plant.time(), 2.0, epsilon = 1e-9);
    }

    #[test]
    fn valve_at_lowest_duty() {
        let mut plant = Plant::new(PlantParams::affine(), 0).unwrap();
        let act = Actuation::valve(0.49);
        assert_relative_eq!(plant.rate(&act), -0.04998, epsilon = 1e-12);
        plant.hold(&act, 6.0, DEFAULT_DT_S).unwrap();
        assert_relative_eq!(plant.temperature() - 33.0, -0.29988, epsilon = 1e-9);
    }

    #[test]
    fn led_at_highest_duty() {
        let plant = Plant::new(PlantParams::affine(), 0).unwrap();
        assert_relative_eq!(plant.rate(&Actuation::led(0.902)), 0.5000044, epsilon = 1e-12);
    }

    #[test]
    fn step_rejects_bad_inputs() {
        let mut plant = Plant::new(PlantParams::default(), 0).unwrap();
        assert!(matches!(plant.step(&Actuation::OFF, 0.0), Err(Error::StepSize(_))));
        assert!(matches!(plant.step(&Actuation::OFF, 0.02), Err(Error::StepSize(_))));
        assert!(matches!(plant.step(&Actuation::valve(1.2), 0.001), Err(Error::Validation(_))));
        assert!(Plant::new(PlantParams { a_l_true: -1.0, ..PlantParams::default() }, 0).is_err());
    }

    #[test]
    fn combined_bias_needs_both_channels() {
        let plant = Plant::new(PlantParams { combined_bias: 0.013, ..PlantParams::affine() }, 0).unwrap();
        let both = Actuation { duty_valve: 0.5, duty_led: 0.5, valve_on: true, led_on: true };
        let sum = plant.rate(&Actuation::valve(0.5)) + plant.rate(&Actuation::led(0.5));
        assert_relative_eq!(plant.rate(&both) - sum, 0.013, epsilon = 1e-12);
    }

    #[test]
    fn noisy_runs_replay_exactly() {
        let params = PlantParams { noise_sigma: 0.05, ..PlantParams::default() };
        let run = |seed| {
            let mut plant = Plant::new(params, seed).unwrap();
            plant.hold(&Actuation::valve(0.55), 3.0, DEFAULT_DT_S).unwrap();
            plant.temperature()
        };
        assert_eq!(run(9).to_bits(), run(9).to_bits());
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn sensor_examples() {
        assert_relative_eq!(SensorReading::quantize(24.0, 0.025).value(), 24.0);
        assert_relative_eq!(SensorReading::quantize(32.91, 0.025).value(), 32.9, epsilon = 1e-12);
        assert_eq!(SensorReading::quantize(30.0125, 0.025).steps, 1201);
        assert_relative_eq!(SensorReading::quantize(30.0125, 0.025).value(), 30.025, epsilon = 1e-12);
        assert_eq!(SensorReading::quantize(-0.0125, 0.025).steps, -1);
    }

    #[test]
    fn layout_examples() {
        let (x, y) = led_position(60.0, 0.0);
        assert_relative_eq!(x, 60.0);
        assert_relative_eq!(y, 0.0);
        let (x, y) = led_position(60.0, 20.5);
        assert!((x - 56.20).abs() < 0.005 && (y - 21.01).abs() < 0.005, "{x} {y}");
        let (x, y) = led_position(60.0, 45.0);
        assert_relative_eq!(x, 60.0 / 2f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(y, 60.0 / 2f64.sqrt(), epsilon = 1e-12);

        let layout = default_layout();
        assert_eq!(layout.entries.len(), 18);
        assert_eq!(layout.entries.iter().filter(|e| e.ring == Ring::Inner).count(), 6);
        assert_eq!(layout.nozzle_distance, 42.0);
        assert!(led_positions(0.0, RingSpec { count: 1, angle_deg: 10.0 }, RingSpec { count: 1, angle_deg: 10.0 })
            .is_err());
    }

    #[test]
    fn config_json_defaults() {
        let cfg: PlantConfig = serde_json::from_str(r#"{"relax_coeff": 0.0}"#).unwrap();
        assert_eq!(cfg.params.relax_coeff, 0.0);
        assert_eq!(cfg.params.a_v_true, -2.252);
        assert_eq!(cfg.rig.air_pressure_mpa, 0.6);
        let text = serde_json::to_string(&PlantConfig::default()).unwrap();
        assert!(text.contains("\"cold_air_ratio\":0.75"));
    }

    proptest! {
        #[test]
        fn quantization_error_bounded(temp in -50.0f64..80.0, res in 0.001f64..0.5) {
            let r = SensorReading::quantize(temp, res);
            prop_assert!((r.value() - temp).abs() <= res / 2.0 + 1e-9);
        }

        #[test]
        fn relaxes_monotonically(t0 in 0.0f64..50.0, k in 0.01f64..0.5) {
            let params = PlantParams { relax_coeff: k, t_init: t0, ..PlantParams::default() };
            let mut plant = Plant::new(params, 0).unwrap();
            let mut gap = (plant.temperature() - 24.0).abs();
            for _ in 0..200 {
                plant.hold(&Actuation::OFF, 0.05, 0.01).unwrap();
                let next = (plant.temperature() - 24.0).abs();
                prop_assert!(next <= gap);
                gap = next;
            }
        }

        #[test]
        fn halving_dt_barely_moves_the_endpoint(dv in 0.0f64..=1.0, dl in 0.0f64..=1.0) {
            let act = Actuation { duty_valve: dv, duty_led: dl, valve_on: true, led_on: true };
            let end = |dt: f64| {
                let mut plant = Plant::new(PlantParams::default(), 0).unwrap();
                plant.hold(&act, 15.0, dt).unwrap();
                plant.temperature()
            };
            prop_assert!((end(1e-3) - end(5e-4)).abs() < 1e-4);
        }
    }
}
