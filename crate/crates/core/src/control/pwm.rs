//! PWM edge generation. Edges are placed on an integer tick grid so that
//! the on-time of every period matches the duty to within one tick.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Edge timing resolution, seconds.
pub const TICK_S: f64 = 1e-6;
pub const VALVE_PWM_HZ: f64 = 100.0;
pub const LED_PWM_HZ: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub tick: u64,
    pub time: f64,
    pub level: Level,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwmWaveform {
    pub frequency: f64,
    pub duty: f64,
    pub period_ticks: u64,
    pub on_ticks: u64,
    pub total_ticks: u64,
    pub edges: Vec<Edge>,
}

impl PwmWaveform {
    /// Level held from `tick` onwards.
    pub fn level_at(&self, tick: u64) -> Level {
        let idx = self.edges.partition_point(|e| e.tick <= tick);
        self.edges[idx.saturating_sub(1)].level
    }

    /// Ticks spent on inside `[from, to)`.
    pub fn on_ticks_between(&self, from: u64, to: u64) -> u64 {
        let mut total = 0;
        for (i, e) in self.edges.iter().enumerate() {
            if e.level != Level::On {
                continue;
            }
            let end = self.edges.get(i + 1).map_or(self.total_ticks, |n| n.tick);
            let (lo, hi) = (e.tick.max(from), end.min(to));
            if hi > lo {
                total += hi - lo;
            }
        }
        total
    }

    pub fn on_time(&self) -> f64 {
        self.on_ticks_between(0, self.total_ticks) as f64 * TICK_S
    }
}

/// Rising edge at every period start, falling edge `duty / frequency` later.
/// Duty 0 and 1 collapse to a single constant level.
pub fn pwm_waveform(duty: f64, frequency: f64, duration: f64) -> Result<PwmWaveform> {
    if !(0.0..=1.0).contains(&duty) {
        return Err(Error::invalid(format!("duty {duty} outside [0, 1]")));
    }
    if !(frequency > 0.0) || !frequency.is_finite() {
        return Err(Error::invalid("frequency must be positive"));
    }
    if !(duration >= 0.0) {
        return Err(Error::invalid("duration must be non-negative"));
    }
    let period_ticks = ((1.0 / frequency) / TICK_S).round().max(1.0) as u64;
    let on_ticks = (duty * period_ticks as f64).round() as u64;
    let total_ticks = (duration / TICK_S).round() as u64;
    let edge = |tick: u64, level| Edge { tick, time: tick as f64 * TICK_S, level };

    let edges = if on_ticks == 0 {
        vec![edge(0, Level::Off)]
    } else if on_ticks >= period_ticks {
        vec![edge(0, Level::On)]
    } else {
        let mut edges = Vec::new();
        let mut start = 0;
        while start < total_ticks {
            edges.push(edge(start, Level::On));
            let fall = start + on_ticks;
            if fall < total_ticks {
                edges.push(edge(fall, Level::Off));
            }
            start += period_ticks;
        }
        if edges.is_empty() {
            edges.push(edge(0, Level::Off));
        }
        edges
    };
    Ok(PwmWaveform { frequency, duty, period_ticks, on_ticks, total_ticks, edges })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn half_duty_at_100_hz() {
        let w = pwm_waveform(0.5, 100.0, 0.02).unwrap();
        let got: Vec<_> = w.edges.iter().map(|e| (e.tick, e.level)).collect();
        assert_eq!(got, vec![(0, Level::On), (5000, Level::Off), (10000, Level::On), (15000, Level::Off)]);
        assert!((w.on_time() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn extremes_are_constant() {
        let off = pwm_waveform(0.0, 100.0, 0.05).unwrap();
        assert_eq!(off.edges.len(), 1);
        assert_eq!(off.edges[0].level, Level::Off);
        assert_eq!(off.on_time(), 0.0);

        let on = pwm_waveform(1.0, 100.0, 0.05).unwrap();
        assert_eq!(on.edges.len(), 1);
        assert_eq!(on.edges[0].level, Level::On);
        assert!((on.on_time() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(pwm_waveform(1.1, 100.0, 1.0).is_err());
        assert!(pwm_waveform(0.5, 0.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn per_period_duty_within_one_tick(duty in 0.0f64..=1.0, freq in 10.0f64..5000.0, periods in 1u64..20) {
            let probe = pwm_waveform(duty, freq, 0.0).unwrap();
            let duration = (probe.period_ticks * periods) as f64 * TICK_S;
            let w = pwm_waveform(duty, freq, duration).unwrap();
            for k in 0..periods {
                let from = k * w.period_ticks;
                let on = w.on_ticks_between(from, from + w.period_ticks) as f64;
                prop_assert!((on - duty * w.period_ticks as f64).abs() <= 1.0);
            }
            for pair in w.edges.windows(2) {
                prop_assert_ne!(pair[0].level, pair[1].level);
                prop_assert!(pair[0].tick < pair[1].tick);
            }
        }
    }
}
