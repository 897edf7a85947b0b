use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{derive_seed, ExperimentConfig, Stream};
use crate::pattern::{Severity, StimulusKind, StimulusSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Exp1,
    Exp2,
    Exp3,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::Exp1 => "exp1",
            ExperimentKind::Exp2 => "exp2",
            ExperimentKind::Exp3 => "exp3",
        })
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().trim_start_matches("exp") {
            "1" => Ok(ExperimentKind::Exp1),
            "2" => Ok(ExperimentKind::Exp2),
            "3" => Ok(ExperimentKind::Exp3),
            _ => Err(Error::invalid(format!("unknown experiment '{s}'"))),
        }
    }
}

/// Stable identifier such as `S1_-0.08_0.10`, `S2_-0.16` or `S3_-0.24`.
pub fn stimulus_id(spec: &StimulusSpec) -> String {
    match spec.kind {
        StimulusKind::S1 => format!("S1_{:.2}_{:.2}", spec.cooling_rate, spec.cooling_ratio),
        kind => format!("{kind}_{:.2}", spec.cooling_rate),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    pub id: String,
    pub spec: StimulusSpec,
}

impl Stimulus {
    pub fn new(spec: StimulusSpec) -> Self {
        Stimulus { id: stimulus_id(&spec), spec }
    }

    /// Cooling time ratio, for alternating stimuli only.
    pub fn ratio(&self) -> Option<f64> {
        (self.spec.kind == StimulusKind::S1).then_some(self.spec.cooling_ratio)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub experiment: ExperimentKind,
    pub stimuli: Vec<Stimulus>,
    pub repetitions: usize,
    pub participants: usize,
    pub seed: u64,
    /// Presentation order per participant, as indices into `stimuli`.
    pub orders: Vec<Vec<usize>>,
}

impl ExperimentPlan {
    fn new(experiment: ExperimentKind, stimuli: Vec<Stimulus>, config: &ExperimentConfig, seed: u64) -> Result<Self> {
        if config.repetitions == 0 {
            return Err(Error::invalid("repetitions must be at least 1"));
        }
        for s in &stimuli {
            if let Some(issue) = s.spec.validate().into_iter().find(|i| i.severity == Severity::Violation) {
                return Err(Error::invalid(format!("stimulus {}: {}", s.id, issue.message)));
            }
        }
        for (i, s) in stimuli.iter().enumerate() {
            if stimuli[..i].iter().any(|o| o.id == s.id) {
                return Err(Error::invalid(format!("duplicate stimulus {}", s.id)));
            }
        }
        let orders = (0..config.participants)
            .map(|p| {
                let mut order: Vec<usize> =
                    (0..config.repetitions).flat_map(|_| 0..stimuli.len()).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Order, p as u64, 0));
                order.shuffle(&mut rng);
                order
            })
            .collect();
        Ok(ExperimentPlan { experiment, stimuli, repetitions: config.repetitions, participants: config.participants, seed, orders })
    }

    pub fn trials_per_participant(&self) -> usize {
        self.stimuli.len() * self.repetitions
    }

    pub fn total_trials(&self) -> usize {
        self.participants * self.trials_per_participant()
    }

    pub fn stimulus_index(&self, id: &str) -> Option<usize> {
        self.stimuli.iter().position(|s| s.id == id)
    }
}

/// Alternating stimuli over the rate × ratio grid, then drop-and-hold and
/// continuous cooling at each rate.
pub fn build_exp2_plan(config: &ExperimentConfig, seed: u64) -> Result<ExperimentPlan> {
    let shape = |spec: StimulusSpec| spec.with_duration(config.duration).with_swing(config.swing);
    let mut stimuli = Vec::new();
    for &rate in &config.cooling_rates {
        for &ratio in &config.cooling_ratios {
            stimuli.push(Stimulus::new(shape(StimulusSpec::alternating(rate, ratio))));
        }
    }
    for &rate in &config.cooling_rates {
        stimuli.push(Stimulus::new(shape(StimulusSpec::drop_and_hold(rate)).with_drop_duration(config.drop_duration)));
    }
    for &rate in &config.cooling_rates {
        stimuli.push(Stimulus::new(shape(StimulusSpec::continuous(rate))));
    }
    ExperimentPlan::new(ExperimentKind::Exp2, stimuli, config, seed)
}

pub fn build_exp3_plan(config: &ExperimentConfig, seed: u64) -> Result<ExperimentPlan> {
    let stimuli = config.exp3_stimuli.iter().map(|s| Stimulus::new(*s)).collect();
    ExperimentPlan::new(ExperimentKind::Exp3, stimuli, config, seed)
}

pub fn build_plan(experiment: ExperimentKind, config: &ExperimentConfig, seed: u64) -> Result<ExperimentPlan> {
    match experiment {
        ExperimentKind::Exp2 => build_exp2_plan(config, seed),
        ExperimentKind::Exp3 => build_exp3_plan(config, seed),
        ExperimentKind::Exp1 => Err(Error::invalid("experiment 1 is the calibration procedure; run `calibrate` instead")),
    }
}
