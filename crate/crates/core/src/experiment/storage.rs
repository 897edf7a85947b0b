use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::CalibrationProtocol;
use crate::error::{Error, Result};
use crate::experiment::participant::{ParticipantModel, SliderTrace, SLIDER_RATE_HZ};
use crate::experiment::plan::{ExperimentKind, ExperimentPlan};
use crate::experiment::runner::{Participant, Response, TrialRecord};
use crate::experiment::ExperimentConfig;
use crate::io::{StagedDir, MANIFEST_FILE};
use crate::pattern::StimulusKind;
use crate::plant::PlantParams;

/// Everything needed to reproduce or re-analyse a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub plant: PlantParams,
    pub protocol: CalibrationProtocol,
    pub participant_model: ParticipantModel,
    pub plan: ExperimentPlan,
    pub participants: Vec<Participant>,
    pub trial_count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordRow {
    trial: usize,
    stimulus_id: String,
    kind: StimulusKind,
    vc: f64,
    lambda: Option<f64>,
    seed: u64,
    likert: Option<u8>,
}

pub fn participant_file(p: usize) -> String {
    format!("participant_{p:02}.csv")
}

pub fn trace_file(p: usize, trial: usize) -> String {
    format!("traces/participant_{p:02}/trial_{trial:03}.csv")
}

fn participant_csv(records: &[&TrialRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(RecordRow {
            trial: r.trial,
            stimulus_id: r.stimulus_id.clone(),
            kind: r.kind,
            vc: r.cooling_rate,
            lambda: r.cooling_ratio,
            seed: r.seed,
            likert: r.likert(),
        })?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn trace_csv(record: &TrialRecord) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let slider = record.slider();
    if slider.is_some() {
        w.write_record(["time_s", "temp_c", "slider"])?;
    } else {
        w.write_record(["time_s", "temp_c"])?;
    }
    for (k, temp) in record.temperature.iter().enumerate() {
        let time = (k as f64 / SLIDER_RATE_HZ).to_string();
        match slider {
            Some(s) => {
                let u = s.samples.get(k).ok_or_else(|| Error::invalid("slider shorter than temperature trace"))?;
                w.write_record([time, temp.to_string(), u.to_string()])?;
            }
            None => w.write_record([time, temp.to_string()])?,
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Write a run directory: one CSV per participant, one trace per trial and
/// the manifest. Nothing appears at `dir` unless every file was written.
pub fn write_run(dir: &Path, manifest: &RunManifest, records: &[TrialRecord]) -> Result<()> {
    let staged = StagedDir::create(dir)?;
    for p in 0..manifest.plan.participants {
        let mine: Vec<&TrialRecord> = records.iter().filter(|r| r.participant == p).collect();
        staged.write(&participant_file(p), &participant_csv(&mine)?)?;
        for r in &mine {
            staged.write(&trace_file(p, r.trial), &trace_csv(r)?)?;
        }
    }
    let mut json = serde_json::to_vec_pretty(manifest)?;
    json.push(b'\n');
    staged.write(MANIFEST_FILE, &json)?;
    staged.commit()
}

fn read_trace(path: &Path, want_slider: bool) -> Result<(Vec<f64>, Option<SliderTrace>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    let mut temps = Vec::new();
    let mut slider = Vec::new();
    for row in r.records() {
        let row = row?;
        let field = |i: usize| -> Result<f64> {
            row.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::invalid(format!("{}: bad value in column {i}", path.display())))
        };
        temps.push(field(1)?);
        if want_slider {
            slider.push(field(2)?);
        }
    }
    let slider = if want_slider { Some(SliderTrace::new(slider)?) } else { None };
    Ok((temps, slider))
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Load a run directory written by [`write_run`].
pub fn read_run(dir: &Path) -> Result<(RunManifest, Vec<TrialRecord>)> {
    let manifest = read_manifest(dir)?;
    let want_slider = manifest.experiment == ExperimentKind::Exp2;
    let mut records = Vec::with_capacity(manifest.trial_count);
    for p in 0..manifest.plan.participants {
        let path = dir.join(participant_file(p));
        let mut r = csv::Reader::from_path(&path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        for row in r.deserialize::<RecordRow>() {
            let row = row?;
            let stimulus_index = manifest
                .plan
                .stimulus_index(&row.stimulus_id)
                .ok_or_else(|| Error::invalid(format!("{}: unknown stimulus {}", path.display(), row.stimulus_id)))?;
            let (temperature, slider) = read_trace(&dir.join(trace_file(p, row.trial)), want_slider)?;
            let response = match (slider, row.likert) {
                (Some(s), None) => Response::Slider(s),
                (None, Some(v)) => Response::Likert(v),
                _ => return Err(Error::invalid(format!("{}: trial {} needs exactly one response", path.display(), row.trial))),
            };
            records.push(TrialRecord {
                participant: p,
                trial: row.trial,
                stimulus_index,
                stimulus_id: row.stimulus_id,
                kind: row.kind,
                cooling_rate: row.vc,
                cooling_ratio: row.lambda,
                seed: row.seed,
                response,
                temperature,
            });
        }
    }
    if records.len() != manifest.trial_count {
        return Err(Error::invalid(format!("expected {} trials, found {}", manifest.trial_count, records.len())));
    }
    Ok((manifest, records))
}
