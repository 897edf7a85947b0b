//! Stimulus-pattern algebra and schedule compilation.
//!
//! An alternating pattern (S1) keeps the cold-air jet on for the whole
//! presentation and pulses the LEDs so that every cycle cools by `swing`
//! during the cooling period and recovers the same amount during the
//! warming period:
//!
//! ```text
//! t_c = swing / -v_c          t = t_c / lambda_c
//! v_r = swing / (t - t_c)     v_h = v_r - v_c = -v_c / (1 - lambda_c)
//! ```
//!
//! The drop-and-hold (S2) and continuous-cooling (S3) kinds exist for
//! comparison and compile to one or two constant-rate segments.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shortest cycle the display hardware is expected to render.
pub const MIN_CYCLE_S: f64 = 0.5;
pub const DEFAULT_SWING_C: f64 = 0.06;
pub const DEFAULT_DURATION_S: f64 = 15.0;
pub const DEFAULT_DROP_S: f64 = 5.0;

/// Boundaries closer than this to the presentation end are snapped to it.
const BOUNDARY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StimulusKind {
    /// Continuous cooling with intermittent warming; mean skin temperature held.
    S1,
    /// Initial drop, then balanced cooling and warming.
    S2,
    /// Continuous cooling only.
    S3,
}

impl fmt::Display for StimulusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StimulusKind::S1 => "S1",
            StimulusKind::S2 => "S2",
            StimulusKind::S3 => "S3",
        })
    }
}

impl FromStr for StimulusKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "S1" => Ok(StimulusKind::S1),
            "S2" => Ok(StimulusKind::S2),
            "S3" => Ok(StimulusKind::S3),
            other => Err(Error::invalid(format!("unknown stimulus kind '{other}'"))),
        }
    }
}

/// A stimulus as designed by the experimenter.
///
/// `cooling_ratio` and `swing` only matter for S1, `drop_duration` only for S2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StimulusSpec {
    pub kind: StimulusKind,
    /// Cooling rate v_c in °C/s, negative.
    pub cooling_rate: f64,
    /// Fraction of each cycle spent cooling.
    pub cooling_ratio: f64,
    /// Per-cycle temperature swing ΔT in °C.
    pub swing: f64,
    /// Presentation length in seconds.
    pub duration: f64,
    /// Length of the initial drop for S2, seconds.
    pub drop_duration: f64,
}

impl StimulusSpec {
    pub fn alternating(cooling_rate: f64, cooling_ratio: f64) -> Self {
        StimulusSpec {
            kind: StimulusKind::S1,
            cooling_rate,
            cooling_ratio,
            swing: DEFAULT_SWING_C,
            duration: DEFAULT_DURATION_S,
            drop_duration: DEFAULT_DROP_S,
        }
    }

    pub fn drop_and_hold(cooling_rate: f64) -> Self {
        StimulusSpec { kind: StimulusKind::S2, ..Self::alternating(cooling_rate, 0.5) }
    }

    pub fn continuous(cooling_rate: f64) -> Self {
        StimulusSpec { kind: StimulusKind::S3, ..Self::alternating(cooling_rate, 0.5) }
    }

    pub fn with_swing(mut self, swing: f64) -> Self {
        self.swing = swing;
        self
    }

    pub fn with_duration(mut self, duration: f64) -> Self {
        self.duration = duration;
        self
    }

    pub fn with_drop_duration(mut self, drop_duration: f64) -> Self {
        self.drop_duration = drop_duration;
        self
    }

    /// Check the invariants for this kind. Violations make the stimulus unusable;
    /// warnings flag specs that are legal but awkward to render.
    pub fn validate(&self) -> Vec<Issue> {
        let mut issues = Vec::new();
        let mut violation = |msg: &str| issues.push(Issue::violation(msg));

        if !(self.cooling_rate < 0.0) {
            violation("v_c must be negative");
        }
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            violation("duration must be positive");
        }
        match self.kind {
            StimulusKind::S1 => {
                if !(self.swing > 0.0) || !self.swing.is_finite() {
                    violation("delta_T must be positive");
                }
                if !(self.cooling_ratio > 0.0 && self.cooling_ratio < 1.0) {
                    violation("lambda_c in open interval (0, 1)");
                }
            }
            StimulusKind::S2 => {
                if !(self.drop_duration > 0.0) {
                    violation("s2_drop_duration must be positive");
                } else if !(self.drop_duration < self.duration) {
                    violation("s2_drop_duration must be shorter than duration");
                }
            }
            StimulusKind::S3 => {}
        }

        if self.kind == StimulusKind::S1 && issues.is_empty() {
            let cycle = self.swing / -self.cooling_rate / self.cooling_ratio;
            if cycle < MIN_CYCLE_S - BOUNDARY_EPS {
                issues.push(Issue::warning(format!(
                    "cycle of {cycle:.4} s is shorter than the {MIN_CYCLE_S} s the display can render"
                )));
            }
        }
        issues
    }

    fn ensure_valid(&self) -> Result<()> {
        let violations: Vec<_> = self
            .validate()
            .into_iter()
            .filter(|i| i.severity == Severity::Violation)
            .map(|i| i.message)
            .collect();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(violations.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Violation,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub severity: Severity,
    pub message: String,
}

impl Issue {
    fn violation(msg: impl Into<String>) -> Self {
        Issue { severity: Severity::Violation, message: msg.into() }
    }

    fn warning(msg: impl Into<String>) -> Self {
        Issue { severity: Severity::Warning, message: msg.into() }
    }
}

/// Cycle quantities implied by an S1 spec.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedPattern {
    /// Cooling period t_c, s.
    pub cooling_time: f64,
    /// Cycle duration t, s.
    pub cycle_time: f64,
    /// Net rate during the warming period v_r, °C/s.
    pub relative_warming_rate: f64,
    /// Rate the LEDs must add on top of the running jet v_h, °C/s.
    pub warming_rate: f64,
}

impl DerivedPattern {
    pub fn warming_time(&self) -> f64 {
        self.cycle_time - self.cooling_time
    }
}

pub fn derive_pattern(spec: &StimulusSpec) -> Result<DerivedPattern> {
    if spec.kind != StimulusKind::S1 {
        return Err(Error::WrongKind { expected: "S1", found: spec.kind.to_string() });
    }
    spec.ensure_valid()?;

    let cooling_time = spec.swing / -spec.cooling_rate;
    let cycle_time = cooling_time / spec.cooling_ratio;
    let relative_warming_rate = spec.swing / (cycle_time - cooling_time);
    Ok(DerivedPattern {
        cooling_time,
        cycle_time,
        relative_warming_rate,
        warming_rate: relative_warming_rate - spec.cooling_rate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    #[serde(rename = "start_s")]
    pub start: f64,
    #[serde(rename = "end_s")]
    pub end: f64,
    #[serde(rename = "rate_c_per_s")]
    pub target_rate: f64,
    pub cold_active: bool,
    pub warm_active: bool,
}

impl Segment {
    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    /// Scheduled temperature change over the segment.
    pub fn delta(&self) -> f64 {
        self.target_rate * self.len()
    }
}

/// Piecewise-constant target skin-temperature rate over one presentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSchedule {
    /// Rate the jet delivers on its own; the LEDs supply any excess of a
    /// segment's target over this value.
    pub cooling_rate: f64,
    pub duration: f64,
    pub segments: Vec<Segment>,
}

impl RateSchedule {
    fn push(&mut self, start: f64, end: f64, rate: f64) {
        self.segments.push(Segment {
            start,
            end,
            target_rate: rate,
            cold_active: true,
            warm_active: rate > self.cooling_rate,
        });
    }

    /// Integral of the target rate over the whole schedule.
    pub fn integrated_delta(&self) -> f64 {
        self.segments.iter().map(Segment::delta).sum()
    }

    /// Integral of the target rate over `[0, until)`.
    pub fn integrated_delta_until(&self, until: f64) -> f64 {
        self.segments
            .iter()
            .take_while(|s| s.start < until)
            .map(|s| s.target_rate * (s.end.min(until) - s.start))
            .sum()
    }

    /// Target rate in effect at time `t`.
    pub fn rate_at(&self, t: f64) -> Option<f64> {
        self.segments.iter().find(|s| s.start <= t && t < s.end).map(|s| s.target_rate)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for seg in &self.segments {
            out.serialize(seg)?;
        }
        if self.segments.is_empty() {
            out.write_record(["start_s", "end_s", "rate_c_per_s", "cold_active", "warm_active"])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Read a schedule written by [`RateSchedule::write_csv`]. The jet rate is
    /// recovered from the first segment, which is always a cooling segment.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let segments = rdr.deserialize().collect::<Result<Vec<Segment>, _>>()?;
        let first = segments.first().ok_or(Error::Empty("schedule has no segments"))?;
        if first.warm_active {
            return Err(Error::invalid("schedule must begin with a cooling segment"));
        }
        let schedule = RateSchedule {
            cooling_rate: first.target_rate,
            duration: segments.last().map(|s| s.end).unwrap_or(0.0),
            segments,
        };
        schedule.check_partition()?;
        Ok(schedule)
    }

    /// Segments must be contiguous, non-empty and cover `[0, duration]`.
    pub fn check_partition(&self) -> Result<()> {
        let mut cursor = 0.0;
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.start != cursor {
                return Err(Error::invalid(format!("segment {i} starts at {} instead of {cursor}", seg.start)));
            }
            if !(seg.end > seg.start) {
                return Err(Error::invalid(format!("segment {i} is empty")));
            }
            if !seg.cold_active {
                return Err(Error::invalid(format!("segment {i} has the cold channel off")));
            }
            if seg.warm_active != (seg.target_rate > self.cooling_rate) {
                return Err(Error::invalid(format!("segment {i} warm flag disagrees with its rate")));
            }
            cursor = seg.end;
        }
        if cursor != self.duration {
            return Err(Error::invalid(format!("schedule ends at {cursor}, expected {}", self.duration)));
        }
        Ok(())
    }
}

/// Compile a stimulus into its rate schedule. Every presentation opens with
/// a cooling segment and is cut exactly at `duration`.
pub fn compile_schedule(spec: &StimulusSpec) -> Result<RateSchedule> {
    spec.ensure_valid()?;
    let duration = spec.duration;
    let mut schedule = RateSchedule { cooling_rate: spec.cooling_rate, duration, segments: Vec::new() };
    let snap = |t: f64| if t >= duration - BOUNDARY_EPS { duration } else { t };

    match spec.kind {
        StimulusKind::S1 => {
            let pattern = derive_pattern(spec)?;
            // Boundaries come from k * t and k * t + t_c, never from running sums.
            for k in 0.. {
                let cycle_start = k as f64 * pattern.cycle_time;
                if cycle_start >= duration - BOUNDARY_EPS {
                    break;
                }
                let cool_end = snap(cycle_start + pattern.cooling_time);
                schedule.push(cycle_start, cool_end, spec.cooling_rate);
                if cool_end == duration {
                    break;
                }
                let warm_end = snap((k + 1) as f64 * pattern.cycle_time);
                schedule.push(cool_end, warm_end, pattern.relative_warming_rate);
            }
        }
        StimulusKind::S2 => {
            schedule.push(0.0, spec.drop_duration, spec.cooling_rate);
            schedule.push(spec.drop_duration, duration, 0.0);
        }
        StimulusKind::S3 => schedule.push(0.0, duration, spec.cooling_rate),
    }
    Ok(schedule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        let p = derive_pattern(&StimulusSpec::alternating(-0.1, 0.5)).unwrap();
        assert_relative_eq!(p.cooling_time, 0.6, epsilon = 1e-12);
        assert_relative_eq!(p.cycle_time, 1.2, epsilon = 1e-12);
        assert_relative_eq!(p.warming_rate, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn fastest_grid_cell() {
        let p = derive_pattern(&StimulusSpec::alternating(-0.24, 0.5)).unwrap();
        assert_relative_eq!(p.cooling_time, 0.25, epsilon = 1e-12);
        assert_relative_eq!(p.cycle_time, 0.5, epsilon = 1e-12);
        assert_relative_eq!(p.relative_warming_rate, 0.24, epsilon = 1e-12);
        assert_relative_eq!(p.warming_rate, 0.48, epsilon = 1e-12);
    }

    #[test]
    fn substitution_oracle() {
        // 0.06 / 0.2 = 0.3; 0.3 / 0.3 = 1.0; 0.06 / 0.7; that plus 0.2
        let p = derive_pattern(&StimulusSpec::alternating(-0.2, 0.3)).unwrap();
        assert_relative_eq!(p.cooling_time, 0.3, epsilon = 1e-12);
        assert_relative_eq!(p.cycle_time, 1.0, epsilon = 1e-12);
        assert_relative_eq!(p.relative_warming_rate, 0.085_714_285_714_285_7, epsilon = 1e-12);
        assert_relative_eq!(p.warming_rate, 0.285_714_285_714_285_7, epsilon = 1e-12);
    }

    #[test]
    fn derive_rejects_other_kinds() {
        assert!(matches!(
            derive_pattern(&StimulusSpec::continuous(-0.1)),
            Err(Error::WrongKind { .. })
        ));
        assert!(matches!(
            derive_pattern(&StimulusSpec::alternating(0.1, 0.5)),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn validation_messages() {
        let issues = StimulusSpec::alternating(-0.1, 0.5).with_swing(-0.01).validate();
        assert_eq!(issues, vec![Issue::violation("delta_T must be positive")]);

        let issues = StimulusSpec::alternating(-0.1, 0.0).validate();
        assert!(issues.iter().any(|i| i.message.starts_with("lambda_c in open interval")));

        // cycle exactly at the 0.5 s floor: no warning
        assert!(StimulusSpec::alternating(-0.24, 0.5).validate().is_empty());

        let short = StimulusSpec::alternating(-0.3, 0.5).validate();
        assert_eq!(short.len(), 1);
        assert_eq!(short[0].severity, Severity::Warning);

        let s2 = StimulusSpec::drop_and_hold(-0.1).with_drop_duration(20.0).validate();
        assert_eq!(s2.len(), 1);
    }

    #[test]
    fn continuous_schedule() {
        let s = compile_schedule(&StimulusSpec::continuous(-0.16)).unwrap();
        assert_eq!(s.segments.len(), 1);
        assert!(!s.segments[0].warm_active);
        assert_relative_eq!(s.integrated_delta(), -2.4, epsilon = 1e-12);
    }

    #[test]
    fn drop_and_hold_schedule() {
        let s = compile_schedule(&StimulusSpec::drop_and_hold(-0.16)).unwrap();
        assert_eq!(s.segments.len(), 2);
        assert_eq!((s.segments[0].start, s.segments[0].end), (0.0, 5.0));
        assert_eq!((s.segments[1].start, s.segments[1].end), (5.0, 15.0));
        assert_eq!(s.segments[1].target_rate, 0.0);
        assert!(s.segments[1].warm_active);
        assert_relative_eq!(s.integrated_delta(), -0.8, epsilon = 1e-12);
    }

    /// Integrate a schedule by fine midpoint sampling, independent of segment lengths.
    fn sampled_integral(s: &RateSchedule, n: usize) -> f64 {
        let h = s.duration / n as f64;
        (0..n).map(|i| s.rate_at((i as f64 + 0.5) * h).unwrap() * h).sum()
    }

    #[test]
    fn worked_example_schedule() {
        let s = compile_schedule(&StimulusSpec::alternating(-0.1, 0.5)).unwrap();
        // 12 full cycles + one 0.6 s cooling segment
        assert_eq!(s.segments.len(), 25);
        let last = s.segments.last().unwrap();
        assert!(!last.warm_active);
        assert_relative_eq!(last.start, 14.4, epsilon = 1e-9);
        assert_eq!(last.end, 15.0);
        assert_relative_eq!(s.integrated_delta(), -0.06, epsilon = 1e-12);
        assert_relative_eq!(sampled_integral(&s, 150_000), -0.06, epsilon = 1e-6);
        assert_relative_eq!(s.integrated_delta_until(14.4), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let s = compile_schedule(&StimulusSpec::alternating(-0.2, 0.3)).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("start_s,end_s,rate_c_per_s,cold_active,warm_active\n"));
        assert_eq!(RateSchedule::read_csv(buf.as_slice()).unwrap(), s);
    }

    fn any_spec() -> impl Strategy<Value = StimulusSpec> {
        (0usize..3, -0.5f64..-0.01, 0.02f64..0.98, 0.01f64..0.2, 1.0f64..30.0, 0.05f64..0.95).prop_map(
            |(kind, rate, ratio, swing, duration, drop_frac)| {
                let spec = StimulusSpec::alternating(rate, ratio)
                    .with_swing(swing)
                    .with_duration(duration)
                    .with_drop_duration(drop_frac * duration);
                match kind {
                    0 => spec,
                    1 => StimulusSpec { kind: StimulusKind::S2, ..spec },
                    _ => StimulusSpec { kind: StimulusKind::S3, ..spec },
                }
            },
        )
    }

    proptest! {
        #[test]
        fn schedules_partition_the_presentation(spec in any_spec()) {
            let s = compile_schedule(&spec).unwrap();
            prop_assert!(s.check_partition().is_ok());
            prop_assert_eq!(s.segments[0].start, 0.0);
            prop_assert_eq!(s.segments.last().unwrap().end, spec.duration);
            prop_assert!(!s.segments[0].warm_active);
        }

        #[test]
        fn whole_cycles_balance(rate in -0.5f64..-0.01, ratio in 0.02f64..0.98, swing in 0.01f64..0.2) {
            let spec = StimulusSpec::alternating(rate, ratio).with_swing(swing);
            let p = derive_pattern(&spec).unwrap();
            let cycles = (spec.duration / p.cycle_time).floor();
            prop_assume!(cycles >= 1.0);
            let s = compile_schedule(&spec).unwrap();
            let whole = s.integrated_delta_until(cycles * p.cycle_time);
            prop_assert!(whole.abs() <= 1e-12 * cycles.max(1.0), "residual {}", whole);
            prop_assert!((-spec.cooling_rate * p.cooling_time - spec.swing).abs() <= 1e-15);
        }

        #[test]
        fn monotone_in_rate_and_ratio(rate in 0.01f64..0.4, bump in 0.001f64..0.1, ratio in 0.05f64..0.9) {
            let slow = derive_pattern(&StimulusSpec::alternating(-rate, ratio)).unwrap();
            let fast = derive_pattern(&StimulusSpec::alternating(-rate - bump, ratio)).unwrap();
            prop_assert!(fast.cycle_time < slow.cycle_time);

            let lo = derive_pattern(&StimulusSpec::alternating(-rate, ratio)).unwrap();
            let hi = derive_pattern(&StimulusSpec::alternating(-rate, ratio + 0.05)).unwrap();
            prop_assert!(hi.warming_rate > lo.warming_rate);
        }
    }
}
