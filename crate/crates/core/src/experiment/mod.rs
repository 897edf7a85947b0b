//! Perception experiments replayed against simulated skin with synthetic
//! participants, plus their analysis.

pub mod analysis;
pub mod participant;
pub mod plan;
pub mod runner;
pub mod storage;

use serde::{Deserialize, Serialize};

use crate::control::CalibrationProtocol;
use crate::error::{Error, Result};
use crate::pattern::{StimulusSpec, DEFAULT_DROP_S, DEFAULT_DURATION_S, DEFAULT_SWING_C};
use crate::plant::{PlantParams, DEFAULT_DT_S};

pub use analysis::{analyze_exp2, analyze_exp3, Exp2Report, Exp3Report, Pooling};
pub use participant::{confidence_of_cold, persistence, simulate_participant, ParticipantModel, SliderTrace};
pub use plan::{build_exp2_plan, build_exp3_plan, build_plan, ExperimentKind, ExperimentPlan, Stimulus};
pub use runner::{recruit_participants, run_experiment, Participant, Response, TrialRecord};
pub use storage::{read_run, write_run, RunManifest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// °C/s, shared by every stimulus kind of the rate-by-ratio experiment.
    pub cooling_rates: Vec<f64>,
    pub cooling_ratios: Vec<f64>,
    pub exp3_stimuli: Vec<StimulusSpec>,
    pub repetitions: usize,
    pub participants: usize,
    /// s
    pub duration: f64,
    /// °C
    pub swing: f64,
    /// s
    pub drop_duration: f64,
    /// Relative spread of each participant's hidden actuator gains.
    pub jitter: f64,
    pub screening_attempts: usize,
    /// s
    pub dt: f64,
    /// Hz
    pub log_rate: f64,
    pub pooling: Pooling,
    pub fdr: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            cooling_rates: vec![-0.08, -0.12, -0.16, -0.20, -0.24],
            cooling_ratios: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            exp3_stimuli: vec![
                StimulusSpec::alternating(-0.08, 0.5),
                StimulusSpec::alternating(-0.16, 0.5),
                StimulusSpec::alternating(-0.24, 0.5),
                StimulusSpec::drop_and_hold(-0.16),
                StimulusSpec::continuous(-0.16),
            ],
            repetitions: 3,
            participants: 15,
            duration: DEFAULT_DURATION_S,
            swing: DEFAULT_SWING_C,
            drop_duration: DEFAULT_DROP_S,
            jitter: 0.1,
            screening_attempts: 20,
            dt: DEFAULT_DT_S,
            log_rate: participant::SLIDER_RATE_HZ,
            pooling: Pooling::Trial,
            fdr: 0.05,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::invalid("jitter must be in [0, 1)"));
        }
        if self.screening_attempts == 0 {
            return Err(Error::invalid("screening_attempts must be at least 1"));
        }
        if !(self.fdr > 0.0 && self.fdr < 1.0) {
            return Err(Error::invalid("fdr must be in (0, 1)"));
        }
        if !(self.log_rate > 0.0) {
            return Err(Error::invalid("log_rate must be positive"));
        }
        Ok(())
    }
}

/// Independent random streams derived from one master seed.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum Stream {
    Order = 1,
    Jitter = 2,
    Calibration = 3,
    Perception = 4,
    Trial = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: Stream, a: u64, b: u64) -> u64 {
    [stream as u64, a, b].iter().fold(splitmix64(master), |acc, &x| splitmix64(acc ^ splitmix64(x)))
}

/// Plan, recruit and run a whole experiment.
pub fn run_full(
    experiment: ExperimentKind,
    config: &ExperimentConfig,
    plant: &PlantParams,
    protocol: &CalibrationProtocol,
    participant_model: &ParticipantModel,
    seed: u64,
) -> Result<(RunManifest, Vec<TrialRecord>)> {
    config.validate()?;
    let plan = build_plan(experiment, config, seed)?;
    let participants = recruit_participants(&plan, plant, protocol, participant_model, config)?;
    let records = run_experiment(&plan, &participants, config)?;
    let manifest = RunManifest {
        experiment,
        seed,
        config: config.clone(),
        plant: *plant,
        protocol: protocol.clone(),
        participant_model: *participant_model,
        trial_count: records.len(),
        plan,
        participants,
    };
    Ok((manifest, records))
}
