use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::participant::{persistence, SliderTrace};
use crate::experiment::runner::{Response, TrialRecord};
use crate::pattern::StimulusKind;
use crate::stats::{benjamini_hochberg, kruskal_wallis, wilcoxon_rank_sum, TestResult};

/// Unit of observation fed to the rank tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Every trial is one observation.
    #[default]
    Trial,
    /// Each participant's mean over repetitions of a stimulus is one observation.
    Participant,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Trial => "trial",
            Pooling::Participant => "participant",
        })
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trial" => Ok(Pooling::Trial),
            "participant" => Ok(Pooling::Participant),
            _ => Err(Error::invalid(format!("unknown pooling '{s}' (trial or participant)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorTest {
    pub factor: String,
    pub levels: Vec<f64>,
    pub group_sizes: Vec<usize>,
    pub test: TestResult,
}

/// Symmetric pairwise comparison table. Diagonal entries are null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseMatrix {
    pub labels: Vec<String>,
    pub statistic: Vec<Vec<Option<f64>>>,
    pub p_raw: Vec<Vec<Option<f64>>>,
    pub p_adjusted: Vec<Vec<Option<f64>>>,
}

impl PairwiseMatrix {
    fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        let empty = vec![vec![None; n]; n];
        PairwiseMatrix { labels, statistic: empty.clone(), p_raw: empty.clone(), p_adjusted: empty }
    }

    fn set(&mut self, i: usize, j: usize, result: &TestResult) {
        self.statistic[i][j] = Some(result.statistic);
        self.p_raw[i][j] = Some(result.p_value);
        self.p_raw[j][i] = Some(result.p_value);
    }

    fn set_adjusted(&mut self, i: usize, j: usize, p: f64) {
        self.p_adjusted[i][j] = Some(p);
        self.p_adjusted[j][i] = Some(p);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub stimulus_id: String,
    pub kind: StimulusKind,
    pub cooling_rate: f64,
    pub cooling_ratio: Option<f64>,
    pub trials: usize,
    pub persistent_trials: usize,
    pub persistent_trial_pct: f64,
    pub participants: usize,
    /// Persistence judged on each participant's repetition-averaged trace.
    pub persistent_participants: usize,
    pub persistent_participant_pct: f64,
    pub mean_confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePairwise {
    pub cooling_rate: f64,
    pub matrix: PairwiseMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp2Report {
    pub pooling: Pooling,
    pub fdr: f64,
    pub cells: Vec<CellSummary>,
    pub s1_by_ratio: Option<FactorTest>,
    pub s1_by_rate: Option<FactorTest>,
    pub s2_by_rate: Option<FactorTest>,
    pub s3_by_rate: Option<FactorTest>,
    /// S1 (all ratios pooled), S2 and S3 compared at each rate, adjusted jointly.
    pub pairwise: Vec<RatePairwise>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub stimulus_id: String,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp3Report {
    pub pooling: Pooling,
    pub fdr: f64,
    pub groups: Vec<GroupSummary>,
    pub kruskal_wallis: TestResult,
    pub pairwise: PairwiseMatrix,
}

/// Stimulus attributes shared by every record of one stimulus.
#[derive(Debug, Clone)]
struct Cell {
    id: String,
    kind: StimulusKind,
    rate: f64,
    ratio: Option<f64>,
    records: Vec<usize>,
}

fn cells(records: &[TrialRecord]) -> Result<Vec<Cell>> {
    if records.is_empty() {
        return Err(Error::Empty("trial records"));
    }
    let mut by_index: BTreeMap<usize, Cell> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if (r.kind == StimulusKind::S1) != r.cooling_ratio.is_some() {
            return Err(Error::invalid(format!("record {i}: cooling ratio must be present exactly for S1")));
        }
        let cell = by_index.entry(r.stimulus_index).or_insert_with(|| Cell {
            id: r.stimulus_id.clone(),
            kind: r.kind,
            rate: r.cooling_rate,
            ratio: r.cooling_ratio,
            records: Vec::new(),
        });
        if cell.id != r.stimulus_id || cell.kind != r.kind || cell.rate != r.cooling_rate || cell.ratio != r.cooling_ratio {
            return Err(Error::invalid(format!("record {i}: stimulus {} disagrees with {}", r.stimulus_id, cell.id)));
        }
        cell.records.push(i);
    }
    Ok(by_index.into_values().collect())
}

/// Observations of one cell under the pooling mode.
fn observations(cell: &Cell, records: &[TrialRecord], value: &dyn Fn(&TrialRecord) -> Result<f64>, pooling: Pooling) -> Result<Vec<f64>> {
    match pooling {
        Pooling::Trial => cell.records.iter().map(|&i| value(&records[i])).collect(),
        Pooling::Participant => {
            let mut per: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for &i in &cell.records {
                per.entry(records[i].participant).or_default().push(value(&records[i])?);
            }
            Ok(per.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect())
        }
    }
}

fn level_key(x: f64) -> i64 {
    (x * 1e9).round() as i64
}

/// Kruskal-Wallis over levels of a factor, levels in order of first appearance.
fn factor_test(name: &str, items: &[(f64, &[f64])]) -> Result<Option<FactorTest>> {
    let mut levels: Vec<f64> = Vec::new();
    let mut groups: Vec<Vec<f64>> = Vec::new();
    for &(level, obs) in items {
        match levels.iter().position(|&l| level_key(l) == level_key(level)) {
            Some(k) => groups[k].extend_from_slice(obs),
            None => {
                levels.push(level);
                groups.push(obs.to_vec());
            }
        }
    }
    if groups.len() < 2 {
        return Ok(None);
    }
    Ok(Some(FactorTest {
        factor: name.to_string(),
        group_sizes: groups.iter().map(Vec::len).collect(),
        levels,
        test: kruskal_wallis(&groups)?,
    }))
}

fn slider_of(r: &TrialRecord) -> Result<&SliderTrace> {
    match &r.response {
        Response::Slider(s) => Ok(s),
        Response::Likert(_) => Err(Error::invalid(format!("trial {} of participant {} has no slider trace", r.trial, r.participant))),
    }
}

fn check_fdr(fdr: f64) -> Result<()> {
    if !(fdr > 0.0 && fdr < 1.0) {
        return Err(Error::invalid(format!("FDR level {fdr} outside (0, 1)")));
    }
    Ok(())
}

pub fn analyze_exp2(records: &[TrialRecord], pooling: Pooling, fdr: f64) -> Result<Exp2Report> {
    check_fdr(fdr)?;
    let cells = cells(records)?;
    let mean_conf = |r: &TrialRecord| slider_of(r)?.mean_confidence();

    let mut summaries = Vec::with_capacity(cells.len());
    let mut obs = Vec::with_capacity(cells.len());
    for cell in &cells {
        let mut persistent_trials = 0;
        let mut per: BTreeMap<usize, Vec<&SliderTrace>> = BTreeMap::new();
        let mut conf_sum = 0.0;
        for &i in &cell.records {
            let trace = slider_of(&records[i])?;
            persistent_trials += persistence(trace)? as usize;
            conf_sum += trace.mean_confidence()?;
            per.entry(records[i].participant).or_default().push(trace);
        }
        let mut persistent_participants = 0;
        for traces in per.values() {
            persistent_participants += persistence(&SliderTrace::average(traces)?)? as usize;
        }
        let trials = cell.records.len();
        summaries.push(CellSummary {
            stimulus_id: cell.id.clone(),
            kind: cell.kind,
            cooling_rate: cell.rate,
            cooling_ratio: cell.ratio,
            trials,
            persistent_trials,
            persistent_trial_pct: 100.0 * persistent_trials as f64 / trials as f64,
            participants: per.len(),
            persistent_participants,
            persistent_participant_pct: 100.0 * persistent_participants as f64 / per.len() as f64,
            mean_confidence: conf_sum / trials as f64,
        });
        obs.push(observations(cell, records, &mean_conf, pooling)?);
    }

    let of_kind = |kind: StimulusKind, level: &dyn Fn(&Cell) -> f64| -> Vec<(f64, &[f64])> {
        cells.iter().zip(&obs).filter(|(c, _)| c.kind == kind).map(|(c, o)| (level(c), o.as_slice())).collect()
    };
    let by_rate = |c: &Cell| c.rate;
    let by_ratio = |c: &Cell| c.ratio.unwrap_or(f64::NAN);

    let s1_by_ratio = factor_test("cooling_ratio", &of_kind(StimulusKind::S1, &by_ratio))?;
    let s1_by_rate = factor_test("cooling_rate", &of_kind(StimulusKind::S1, &by_rate))?;
    let s2_by_rate = factor_test("cooling_rate", &of_kind(StimulusKind::S2, &by_rate))?;
    let s3_by_rate = factor_test("cooling_rate", &of_kind(StimulusKind::S3, &by_rate))?;

    // rates in order of first appearance
    let mut rates: Vec<f64> = Vec::new();
    for c in &cells {
        if !rates.iter().any(|&r| level_key(r) == level_key(c.rate)) {
            rates.push(c.rate);
        }
    }
    let kinds = [StimulusKind::S1, StimulusKind::S2, StimulusKind::S3];
    let mut pairwise = Vec::new();
    let mut pending = Vec::new();
    for &rate in &rates {
        let pooled: Vec<Vec<f64>> = kinds
            .iter()
            .map(|&k| {
                cells
                    .iter()
                    .zip(&obs)
                    .filter(|(c, _)| c.kind == k && level_key(c.rate) == level_key(rate))
                    .flat_map(|(_, o)| o.iter().copied())
                    .collect()
            })
            .collect();
        let mut matrix = PairwiseMatrix::new(kinds.iter().map(|k| k.to_string()).collect());
        for i in 0..3 {
            for j in i + 1..3 {
                if pooled[i].is_empty() || pooled[j].is_empty() {
                    continue;
                }
                let result = wilcoxon_rank_sum(&pooled[i], &pooled[j])?;
                matrix.set(i, j, &result);
                matrix.statistic[j][i] = Some(pooled[i].len() as f64 * pooled[j].len() as f64 - result.statistic);
                pending.push((pairwise.len(), i, j, result.p_value));
            }
        }
        pairwise.push(RatePairwise { cooling_rate: rate, matrix });
    }
    let adjusted = benjamini_hochberg(&pending.iter().map(|p| p.3).collect::<Vec<_>>())?;
    for (&(m, i, j, _), q) in pending.iter().zip(adjusted) {
        pairwise[m].matrix.set_adjusted(i, j, q);
    }

    Ok(Exp2Report { pooling, fdr, cells: summaries, s1_by_ratio, s1_by_rate, s2_by_rate, s3_by_rate, pairwise })
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn analyze_exp3(records: &[TrialRecord], pooling: Pooling, fdr: f64) -> Result<Exp3Report> {
    check_fdr(fdr)?;
    let cells = cells(records)?;
    let rating = |r: &TrialRecord| match r.response {
        Response::Likert(v) if (1..=7).contains(&v) => Ok(v as f64),
        Response::Likert(v) => Err(Error::invalid(format!("rating {v} outside 1..=7"))),
        Response::Slider(_) => Err(Error::invalid(format!("trial {} of participant {} has no rating", r.trial, r.participant))),
    };
    let obs: Vec<Vec<f64>> = cells.iter().map(|c| observations(c, records, &rating, pooling)).collect::<Result<_>>()?;
    if obs.len() < 2 {
        return Err(Error::invalid("rating analysis needs at least two stimuli"));
    }

    let groups = cells
        .iter()
        .zip(&obs)
        .map(|(c, o)| GroupSummary {
            stimulus_id: c.id.clone(),
            n: o.len(),
            mean: o.iter().sum::<f64>() / o.len() as f64,
            median: median(o),
        })
        .collect();

    let mut matrix = PairwiseMatrix::new(cells.iter().map(|c| c.id.clone()).collect());
    let mut pending = Vec::new();
    for i in 0..obs.len() {
        for j in i + 1..obs.len() {
            let result = wilcoxon_rank_sum(&obs[i], &obs[j])?;
            matrix.set(i, j, &result);
            matrix.statistic[j][i] = Some(obs[i].len() as f64 * obs[j].len() as f64 - result.statistic);
            pending.push((i, j, result.p_value));
        }
    }
    let adjusted = benjamini_hochberg(&pending.iter().map(|p| p.2).collect::<Vec<_>>())?;
    for (&(i, j, _), q) in pending.iter().zip(adjusted) {
        matrix.set_adjusted(i, j, q);
    }

    Ok(Exp3Report { pooling, fdr, groups, kruskal_wallis: kruskal_wallis(&obs)?, pairwise: matrix })
}
