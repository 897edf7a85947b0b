use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slider sampling rate, Hz.
pub const SLIDER_RATE_HZ: f64 = 100.0;

/// Window over which a trial must stay on the cold side to count as persistent.
pub const PERSISTENCE_WINDOW_S: (f64, f64) = (5.0, 15.0);

/// Cooling rate mapped to the top of the Likert intensity term.
pub const LIKERT_RATE_SCALE: f64 = 0.24;

/// Synthetic perceiver standing in for a human participant.
///
/// Cooling and warming are sensed by separate rectified channels, each
/// low-passed with `time_constant`. Warmth is weighted by `warm_weight`; with
/// a weight of 1 the perceived rate is just the low-passed dT/dt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParticipantModel {
    /// °C/s
    pub detect_threshold: f64,
    /// s
    pub time_constant: f64,
    /// s
    pub slider_lag: f64,
    /// slider units
    pub response_noise: f64,
    pub warm_weight: f64,
    /// Slider deflection per °C/s of suprathreshold rate, before saturation.
    pub gain: f64,
    pub seed: u64,
}

impl Default for ParticipantModel {
    fn default() -> Self {
        ParticipantModel {
            detect_threshold: 0.02,
            time_constant: 1.0,
            slider_lag: 0.5,
            response_noise: 0.02,
            warm_weight: 0.5,
            gain: 15.0,
            seed: 0,
        }
    }
}

impl ParticipantModel {
    pub fn with_seed(self, seed: u64) -> Self {
        ParticipantModel { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("detect_threshold", self.detect_threshold),
            ("time_constant", self.time_constant),
            ("slider_lag", self.slider_lag),
            ("response_noise", self.response_noise),
            ("warm_weight", self.warm_weight),
            ("gain", self.gain),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and non-negative")));
            }
        }
        if self.time_constant <= 0.0 {
            return Err(Error::invalid("time_constant must be positive"));
        }
        Ok(())
    }
}

/// Slider positions at 100 Hz: 1 is the "C" end, 0.5 neutral, 0 the "H" end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliderTrace {
    pub sample_rate: f64,
    pub samples: Vec<f64>,
}

impl SliderTrace {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if let Some(u) = samples.iter().find(|u| !(0.0..=1.0).contains(*u)) {
            return Err(Error::invalid(format!("slider sample {u} outside [0, 1]")));
        }
        Ok(SliderTrace { sample_rate: SLIDER_RATE_HZ, samples })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn confidences(&self) -> Vec<f64> {
        self.samples.iter().map(|u| 100.0 * u).collect()
    }

    pub fn mean_confidence(&self) -> Result<f64> {
        if self.samples.is_empty() {
            return Err(Error::Empty("slider trace"));
        }
        Ok(100.0 * self.samples.iter().sum::<f64>() / self.samples.len() as f64)
    }

    /// Element-wise mean of equally long traces.
    pub fn average(traces: &[&SliderTrace]) -> Result<SliderTrace> {
        let first = traces.first().ok_or(Error::Empty("slider traces"))?;
        if traces.iter().any(|t| t.samples.len() != first.samples.len()) {
            return Err(Error::invalid("slider traces differ in length"));
        }
        let n = traces.len() as f64;
        let samples = (0..first.samples.len())
            .map(|k| (traces.iter().map(|t| t.samples[k]).sum::<f64>() / n).clamp(0.0, 1.0))
            .collect();
        Ok(SliderTrace { sample_rate: first.sample_rate, samples })
    }
}

/// Slider output together with the peak of the cold channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Perception {
    pub slider: SliderTrace,
    /// °C/s
    pub peak_cold_rate: f64,
}

fn soft_threshold(x: f64, threshold: f64) -> f64 {
    x.signum() * (x.abs() - threshold).max(0.0)
}

/// Run the perceiver over a temperature trace sampled at `sample_rate` Hz.
/// `temps` holds sample points, so n points give n − 1 rate intervals and
/// (n − 1) · 100 / `sample_rate` slider samples.
pub fn perceive(temps: &[f64], sample_rate: f64, model: &ParticipantModel) -> Result<Perception> {
    model.validate()?;
    let decimation = sample_rate / SLIDER_RATE_HZ;
    if !(decimation >= 1.0 - 1e-9) || (decimation - decimation.round()).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "temperature trace at {sample_rate} Hz is not an integer multiple of {SLIDER_RATE_HZ} Hz"
        )));
    }
    if temps.len() < 2 {
        return Err(Error::invalid("temperature trace needs at least two samples"));
    }
    let decimation = decimation.round() as usize;
    let h = 1.0 / sample_rate;
    let alpha = 1.0 - (-h / model.time_constant).exp();

    let mut cold = 0.0;
    let mut warm = 0.0;
    let mut peak_cold_rate = 0.0f64;
    let mut targets = Vec::with_capacity(temps.len() / decimation + 1);
    for (k, pair) in temps.windows(2).enumerate() {
        let rate = (pair[1] - pair[0]) * sample_rate;
        cold += alpha * ((-rate).max(0.0) - cold);
        warm += alpha * (rate.max(0.0) - warm);
        peak_cold_rate = peak_cold_rate.max(cold);
        if k % decimation == 0 {
            let perceived = model.warm_weight * warm - cold;
            targets.push(0.5 - 0.5 * (model.gain * soft_threshold(perceived, model.detect_threshold)).tanh());
        }
    }

    let lag = (model.slider_lag * SLIDER_RATE_HZ).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let noise = (model.response_noise > 0.0).then(|| Normal::new(0.0, model.response_noise).expect("validated"));
    let clip = 3.0 * model.response_noise;
    let samples = (0..targets.len())
        .map(|j| {
            let target = if j < lag { 0.5 } else { targets[j - lag] };
            let e = noise.as_ref().map_or(0.0, |n| n.sample(&mut rng).clamp(-clip, clip));
            (target + e).clamp(0.0, 1.0)
        })
        .collect();
    Ok(Perception { slider: SliderTrace { sample_rate: SLIDER_RATE_HZ, samples }, peak_cold_rate })
}

pub fn simulate_participant(temps: &[f64], sample_rate: f64, model: &ParticipantModel) -> Result<SliderTrace> {
    Ok(perceive(temps, sample_rate, model)?.slider)
}

pub fn confidence_of_cold(u: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::invalid(format!("slider sample {u} outside [0, 1]")));
    }
    Ok(100.0 * u)
}

/// True when every sample in the 5–15 s window is on the cold side of neutral.
pub fn persistence(trace: &SliderTrace) -> Result<bool> {
    let (from, to) = PERSISTENCE_WINDOW_S;
    let rate = trace.sample_rate;
    if trace.duration() < to - 1.0 / rate - 1e-9 {
        return Err(Error::invalid(format!("trace of {} s is shorter than {to} s", trace.duration())));
    }
    let first = (from * rate - 1e-9).ceil() as usize;
    let last = ((to * rate + 1e-9).floor() as usize).min(trace.samples.len() - 1);
    Ok(trace.samples[first..=last].iter().all(|&u| u > 0.5))
}

/// 7-point coldness rating from the mean confidence of cold and the peak
/// low-passed cooling rate. Both terms only ever raise the rating.
pub fn likert_rating(slider: &SliderTrace, peak_cold_rate: f64) -> Result<u8> {
    let confidence = ((slider.mean_confidence()? - 50.0) / 50.0).clamp(0.0, 1.0);
    let intensity = (peak_cold_rate / LIKERT_RATE_SCALE).clamp(0.0, 1.0);
    let f = (0.5 * confidence + 0.5 * intensity).clamp(0.0, 1.0);
    Ok((1.0 + 6.0 * f).round().clamp(1.0, 7.0) as u8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(rate: f64, seconds: f64) -> Vec<f64> {
        (0..=(seconds * 100.0) as usize).map(|k| 33.0 + rate * k as f64 / 100.0).collect()
    }

    fn settled_mean(trace: &SliderTrace) -> f64 {
        let tail = &trace.samples[500..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }

    #[test]
    fn constant_cooling_goes_cold() {
        let s = simulate_participant(&ramp(-0.24, 15.0), 100.0, &ParticipantModel::default()).unwrap();
        assert_eq!(s.samples.len(), 1500);
        assert!(settled_mean(&s) > 0.9);
        // lag keeps the slider neutral for the first 0.5 s apart from noise
        assert!(s.samples[..50].iter().all(|u| (u - 0.5).abs() <= 0.06 + 1e-12));
    }

    #[test]
    fn constant_warming_goes_hot() {
        let s = simulate_participant(&ramp(0.24, 15.0), 100.0, &ParticipantModel::default()).unwrap();
        assert!(settled_mean(&s) < 0.1);
    }

    #[test]
    fn constant_temperature_stays_neutral() {
        let s = simulate_participant(&ramp(0.0, 15.0), 100.0, &ParticipantModel::default()).unwrap();
        assert!((settled_mean(&s) - 0.5).abs() < 0.01);
        assert!(s.samples.iter().all(|u| (u - 0.5).abs() <= 0.06 + 1e-12));
    }

    #[test]
    fn unit_warm_weight_is_linear_in_rate() {
        // cooling then equal warming cancels exactly in the low-passed rate
        let model = ParticipantModel { warm_weight: 1.0, response_noise: 0.0, slider_lag: 0.0, ..Default::default() };
        let mut temps = ramp(-0.1, 1.0);
        let top = *temps.last().unwrap();
        temps.extend((1..=100).map(|k| top + 0.1 * k as f64 / 100.0));
        let p = perceive(&temps, 100.0, &model).unwrap();
        assert!(p.peak_cold_rate > 0.05);
        // a single-channel perceiver would read both halves through one filter
        let h = 0.01f64;
        let alpha = 1.0 - (-h).exp();
        let mut lp = 0.0;
        for w in temps.windows(2) {
            lp += alpha * ((w[1] - w[0]) / h - lp);
        }
        let last = *p.slider.samples.last().unwrap();
        let expected = 0.5 - 0.5 * (15.0 * soft_threshold(lp, 0.02)).tanh();
        assert!((last - expected).abs() < 1e-9, "{last} vs {expected}");
    }

    #[test]
    fn decimates_faster_traces() {
        let fast: Vec<f64> = (0..=15000).map(|k| 33.0 - 0.2 * k as f64 / 1000.0).collect();
        let s = simulate_participant(&fast, 1000.0, &ParticipantModel::default()).unwrap();
        assert_eq!(s.samples.len(), 1500);
        assert!(simulate_participant(&fast, 150.0, &ParticipantModel::default()).is_err());
        assert!(simulate_participant(&fast, 50.0, &ParticipantModel::default()).is_err());
    }

    #[test]
    fn confidence_mapping() {
        assert_eq!(confidence_of_cold(1.0).unwrap(), 100.0);
        assert_eq!(confidence_of_cold(0.5).unwrap(), 50.0);
        assert_eq!(confidence_of_cold(0.0).unwrap(), 0.0);
        assert!(confidence_of_cold(1.01).is_err());
        assert!(confidence_of_cold(-0.1).is_err());
    }

    #[test]
    fn persistence_examples() {
        let flat = SliderTrace::new(vec![0.8; 1500]).unwrap();
        assert!(persistence(&flat).unwrap());

        let mut dip = vec![0.8; 1500];
        dip[1000] = 0.4;
        assert!(!persistence(&SliderTrace::new(dip).unwrap()).unwrap());

        let mut early = vec![0.8; 1500];
        early[300] = 0.3;
        assert!(persistence(&SliderTrace::new(early).unwrap()).unwrap());

        let mut edge = vec![0.8; 1500];
        edge[500] = 0.5;
        assert!(!persistence(&SliderTrace::new(edge).unwrap()).unwrap());

        assert!(persistence(&SliderTrace::new(vec![0.8; 1000]).unwrap()).is_err());
    }

    #[test]
    fn likert_bounds() {
        let cold = SliderTrace::new(vec![1.0; 1500]).unwrap();
        let neutral = SliderTrace::new(vec![0.5; 1500]).unwrap();
        let hot = SliderTrace::new(vec![0.0; 1500]).unwrap();
        assert_eq!(likert_rating(&cold, 1.0).unwrap(), 7);
        assert_eq!(likert_rating(&neutral, 0.0).unwrap(), 1);
        assert_eq!(likert_rating(&hot, 0.0).unwrap(), 1);
        assert_eq!(likert_rating(&neutral, 0.24).unwrap(), 4);
    }

    #[test]
    fn rejects_bad_models() {
        let m = ParticipantModel { time_constant: 0.0, ..Default::default() };
        assert!(simulate_participant(&ramp(0.0, 1.0), 100.0, &m).is_err());
        let m = ParticipantModel { response_noise: -0.1, ..Default::default() };
        assert!(m.validate().is_err());
    }

    proptest! {
        #[test]
        fn slider_stays_in_unit_interval(rates in proptest::collection::vec(-1.0f64..1.0, 1..30), seed in any::<u64>()) {
            let mut temps = vec![33.0];
            for r in &rates {
                for _ in 0..50 {
                    let last = *temps.last().unwrap();
                    temps.push(last + r / 100.0);
                }
            }
            let model = ParticipantModel { response_noise: 0.2, ..Default::default() }.with_seed(seed);
            let s = simulate_participant(&temps, 100.0, &model).unwrap();
            prop_assert_eq!(s.samples.len(), temps.len() - 1);
            prop_assert!(s.samples.iter().all(|u| (0.0..=1.0).contains(u)));
        }

        #[test]
        fn persistence_matches_window_recount(samples in proptest::collection::vec(0.0f64..1.0, 1500..1510)) {
            let trace = SliderTrace::new(samples.clone()).unwrap();
            let expected = samples.iter().enumerate()
                .filter(|(k, _)| { let t = *k as f64 / 100.0; (5.0 - 1e-9..=15.0 + 1e-9).contains(&t) })
                .all(|(_, &u)| 100.0 * u > 50.0);
            prop_assert_eq!(persistence(&trace).unwrap(), expected);
        }

        #[test]
        fn likert_monotone(conf_a in 0.0f64..1.0, conf_b in 0.0f64..1.0, peak_a in 0.0f64..0.5, peak_b in 0.0f64..0.5) {
            let (lo_c, hi_c) = if conf_a <= conf_b { (conf_a, conf_b) } else { (conf_b, conf_a) };
            let (lo_p, hi_p) = if peak_a <= peak_b { (peak_a, peak_b) } else { (peak_b, peak_a) };
            let lo = likert_rating(&SliderTrace::new(vec![lo_c; 100]).unwrap(), lo_p).unwrap();
            let hi = likert_rating(&SliderTrace::new(vec![hi_c; 100]).unwrap(), hi_p).unwrap();
            prop_assert!(lo <= hi && (1..=7).contains(&lo) && (1..=7).contains(&hi));
        }
    }
}
