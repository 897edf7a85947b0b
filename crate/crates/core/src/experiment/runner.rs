use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{calibrate, run_control, schedule_to_timeline, CalibrationProtocol, ChannelModels};
use crate::error::{Error, Result};
use crate::experiment::participant::{perceive, likert_rating, ParticipantModel, SliderTrace};
use crate::experiment::plan::{ExperimentKind, ExperimentPlan, Stimulus};
use crate::experiment::{derive_seed, ExperimentConfig, Stream};
use crate::pattern::{compile_schedule, StimulusKind};
use crate::plant::{Plant, PlantParams};

/// A synthetic participant: a perturbed hidden plant, the models calibrated
/// against it, and a perceiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub index: usize,
    pub params: PlantParams,
    pub valve_gain: f64,
    pub led_gain: f64,
    /// Draws needed before a plant passed calibration and screening.
    pub attempts: usize,
    pub calibration_iterations: usize,
    pub models: ChannelModels,
    pub perception: ParticipantModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Response {
    Slider(SliderTrace),
    Likert(u8),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub participant: usize,
    /// Position in the participant's presentation order.
    pub trial: usize,
    pub stimulus_index: usize,
    pub stimulus_id: String,
    pub kind: StimulusKind,
    pub cooling_rate: f64,
    pub cooling_ratio: Option<f64>,
    pub seed: u64,
    pub response: Response,
    /// Skin temperature at the slider rate, one value per logging interval.
    pub temperature: Vec<f64>,
}

impl TrialRecord {
    pub fn slider(&self) -> Option<&SliderTrace> {
        match &self.response {
            Response::Slider(s) => Some(s),
            Response::Likert(_) => None,
        }
    }

    pub fn likert(&self) -> Option<u8> {
        match self.response {
            Response::Likert(r) => Some(r),
            Response::Slider(_) => None,
        }
    }
}

fn jittered(base: &PlantParams, valve_gain: f64, led_gain: f64) -> PlantParams {
    PlantParams {
        a_v_true: base.a_v_true * valve_gain,
        b_v_true: base.b_v_true * valve_gain,
        a_l_true: base.a_l_true * led_gain,
        b_l_true: base.b_l_true * led_gain,
        ..*base
    }
}

/// Check that every stimulus of the plan can be rendered with `models`.
pub fn screen(plan: &ExperimentPlan, models: &ChannelModels) -> Result<()> {
    for s in &plan.stimuli {
        schedule_to_timeline(&compile_schedule(&s.spec)?, models).map_err(|e| e.with_context(format!("stimulus {}", s.id)))?;
    }
    Ok(())
}

/// Draw, calibrate and screen one participant. Plants that fail calibration
/// or cannot render the plan are redrawn, up to `screening_attempts` times.
pub fn recruit_participant(
    index: usize,
    plan: &ExperimentPlan,
    base: &PlantParams,
    protocol: &CalibrationProtocol,
    perception: &ParticipantModel,
    config: &ExperimentConfig,
) -> Result<Participant> {
    let mut last_err = None;
    for attempt in 0..config.screening_attempts {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, Stream::Jitter, index as u64, attempt as u64));
        let mut gain = || if config.jitter > 0.0 { rng.random_range(1.0 - config.jitter..=1.0 + config.jitter) } else { 1.0 };
        let (valve_gain, led_gain) = (gain(), gain());
        let params = jittered(base, valve_gain, led_gain);
        let mut plant = Plant::new(params, derive_seed(plan.seed, Stream::Calibration, index as u64, attempt as u64))?;
        let outcome = match calibrate(&mut plant, protocol) {
            Ok(o) => o,
            Err(e @ (Error::UnreachableRate { .. } | Error::CalibrationFailure { .. })) => {
                last_err = Some(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        if let Err(e) = screen(plan, &outcome.models) {
            last_err = Some(e);
            continue;
        }
        return Ok(Participant {
            index,
            params,
            valve_gain,
            led_gain,
            attempts: attempt + 1,
            calibration_iterations: outcome.iterations,
            models: outcome.models,
            perception: perception.with_seed(derive_seed(plan.seed, Stream::Perception, index as u64, 0)),
        });
    }
    let err = last_err.unwrap_or_else(|| Error::invalid("screening_attempts must be at least 1"));
    Err(err.with_context(format!("participant {index}")))
}

pub fn recruit_participants(
    plan: &ExperimentPlan,
    base: &PlantParams,
    protocol: &CalibrationProtocol,
    perception: &ParticipantModel,
    config: &ExperimentConfig,
) -> Result<Vec<Participant>> {
    base.validate()?;
    protocol.validate()?;
    perception.validate()?;
    (0..plan.participants)
        .into_par_iter()
        .map(|i| recruit_participant(i, plan, base, protocol, perception, config))
        .collect()
}

/// Present one stimulus to one participant from a fresh skin state.
pub fn replay_trial(
    participant: &Participant,
    stimulus: &Stimulus,
    experiment: ExperimentKind,
    seed: u64,
    config: &ExperimentConfig,
) -> Result<(Response, Vec<f64>)> {
    let timeline = schedule_to_timeline(&compile_schedule(&stimulus.spec)?, &participant.models)
        .map_err(|e| e.with_context(format!("stimulus {}", stimulus.id)))?;
    let mut plant = Plant::new(participant.params, seed)?;
    let run = run_control(&timeline, &mut plant, config.dt, config.log_rate)?;
    let mut temps = run.temperatures();
    temps.push(run.end_temp);
    let perceiver = participant.perception.with_seed(derive_seed(seed, Stream::Perception, 0, 0));
    let perception = perceive(&temps, config.log_rate, &perceiver)?;
    temps.pop();
    let response = match experiment {
        ExperimentKind::Exp2 => Response::Slider(perception.slider),
        ExperimentKind::Exp3 => Response::Likert(likert_rating(&perception.slider, perception.peak_cold_rate)?),
        ExperimentKind::Exp1 => return Err(Error::invalid("experiment 1 has no perception trials")),
    };
    Ok((response, temps))
}

pub fn trial_seed(plan_seed: u64, participant: usize, trial: usize) -> u64 {
    derive_seed(plan_seed, Stream::Trial, participant as u64, trial as u64)
}

/// Run every trial of the plan. Trials run in parallel; records come back in
/// participant then presentation order.
pub fn run_experiment(plan: &ExperimentPlan, participants: &[Participant], config: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    if plan.experiment == ExperimentKind::Exp1 {
        return Err(Error::invalid("experiment 1 is the calibration procedure; run `calibrate` instead"));
    }
    if participants.len() != plan.participants || plan.orders.len() != plan.participants {
        return Err(Error::invalid(format!(
            "plan expects {} participants, got {}",
            plan.participants,
            participants.len()
        )));
    }
    let jobs: Vec<(usize, usize, usize)> = plan
        .orders
        .iter()
        .enumerate()
        .flat_map(|(p, order)| order.iter().enumerate().map(move |(t, &s)| (p, t, s)))
        .collect();
    jobs.into_par_iter()
        .map(|(p, trial, stimulus_index)| {
            let stimulus = plan
                .stimuli
                .get(stimulus_index)
                .ok_or_else(|| Error::invalid(format!("order refers to missing stimulus {stimulus_index}")))?;
            let seed = trial_seed(plan.seed, p, trial);
            let (response, temperature) = replay_trial(&participants[p], stimulus, plan.experiment, seed, config)?;
            Ok(TrialRecord {
                participant: p,
                trial,
                stimulus_index,
                stimulus_id: stimulus.id.clone(),
                kind: stimulus.spec.kind,
                cooling_rate: stimulus.spec.cooling_rate,
                cooling_ratio: stimulus.ratio(),
                seed,
                response,
                temperature,
            })
        })
        .collect()
}
