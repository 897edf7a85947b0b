//! C ABI over the coldsense stimulus, plant, calibration and statistics APIs.
//!
//! Every fallible function returns a [`CsStatus`]; on failure the message is
//! available from [`cs_last_error_message`] on the same thread. Handles are
//! opaque and must be released with their matching `*_free` function.
//! Pointer arguments must be null or valid for the documented length; null
//! is reported as `NullPointer` rather than dereferenced.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use coldsense::control::{self, CalibrationProtocol, ChannelModels, ControlRun, DutyModel};
use coldsense::pattern::{self, RateSchedule, StimulusKind, StimulusSpec};
use coldsense::plant::{Actuation, Plant, PlantParams};
use coldsense::{stats, Channel, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnreachableRate = 3,
    CalibrationFailed = 4,
    Io = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

impl From<&Error> for CsStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::UnreachableRate { .. } => CsStatus::UnreachableRate,
            Error::CalibrationFailure { .. } => CsStatus::CalibrationFailed,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => CsStatus::Io,
            _ => CsStatus::InvalidArgument,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(CsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(CsStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(CsStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CsStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn array<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        Ok(&[])
    } else if p.is_null() {
        Err(null(what))
    } else {
        Ok(slice::from_raw_parts(p, len))
    }
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn cs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---- stimulus design -------------------------------------------------------

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsStimulusKind {
    S1 = 1,
    S2 = 2,
    S3 = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CsStimulusSpec {
    pub kind: CsStimulusKind,
    /// °C/s, negative.
    pub cooling_rate: f64,
    pub cooling_ratio: f64,
    /// °C
    pub swing: f64,
    /// s
    pub duration: f64,
    /// s
    pub drop_duration: f64,
}

impl From<&CsStimulusSpec> for StimulusSpec {
    fn from(s: &CsStimulusSpec) -> Self {
        StimulusSpec {
            kind: match s.kind {
                CsStimulusKind::S1 => StimulusKind::S1,
                CsStimulusKind::S2 => StimulusKind::S2,
                CsStimulusKind::S3 => StimulusKind::S3,
            },
            cooling_rate: s.cooling_rate,
            cooling_ratio: s.cooling_ratio,
            swing: s.swing,
            duration: s.duration,
            drop_duration: s.drop_duration,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CsDerivedPattern {
    pub cooling_time: f64,
    pub cycle_time: f64,
    pub relative_warming_rate: f64,
    pub warming_rate: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CsSegment {
    pub start: f64,
    pub end: f64,
    pub target_rate: f64,
    pub cold_active: bool,
    pub warm_active: bool,
}

/// Compiled rate schedule.
pub struct CsSchedule(RateSchedule);

/// Spec with the default swing, duration and drop length.
#[no_mangle]
pub extern "C" fn cs_stimulus_default(kind: CsStimulusKind, cooling_rate: f64, cooling_ratio: f64) -> CsStimulusSpec {
    CsStimulusSpec {
        kind,
        cooling_rate,
        cooling_ratio,
        swing: pattern::DEFAULT_SWING_C,
        duration: pattern::DEFAULT_DURATION_S,
        drop_duration: pattern::DEFAULT_DROP_S,
    }
}

/// `spec` and `out` must be valid pointers or null.
#[no_mangle]
pub unsafe extern "C" fn cs_derive_pattern(spec: *const CsStimulusSpec, out: *mut CsDerivedPattern) -> CsStatus {
    guard(|| {
        let spec = StimulusSpec::from(deref(spec, "spec")?);
        let out = deref_mut(out, "out")?;
        let d = pattern::derive_pattern(&spec)?;
        *out = CsDerivedPattern {
            cooling_time: d.cooling_time,
            cycle_time: d.cycle_time,
            relative_warming_rate: d.relative_warming_rate,
            warming_rate: d.warming_rate,
        };
        Ok(())
    })
}

/// `spec` must be valid or null; `out` receives a handle owned by the caller.
#[no_mangle]
pub unsafe extern "C" fn cs_schedule_compile(spec: *const CsStimulusSpec, out: *mut *mut CsSchedule) -> CsStatus {
    guard(|| {
        let spec = StimulusSpec::from(deref(spec, "spec")?);
        let out = deref_mut(out, "out")?;
        let schedule = pattern::compile_schedule(&spec)?;
        *out = Box::into_raw(Box::new(CsSchedule(schedule)));
        Ok(())
    })
}

/// Number of segments, 0 for a null handle.
/// `schedule` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cs_schedule_len(schedule: *const CsSchedule) -> usize {
    schedule.as_ref().map_or(0, |s| s.0.segments.len())
}

/// `schedule` must be a live handle; `out` valid or null.
#[no_mangle]
pub unsafe extern "C" fn cs_schedule_segment(schedule: *const CsSchedule, index: usize, out: *mut CsSegment) -> CsStatus {
    guard(|| {
        let schedule = &deref(schedule, "schedule")?.0;
        let out = deref_mut(out, "out")?;
        let seg = schedule.segments.get(index).ok_or_else(|| {
            Failure(CsStatus::InvalidArgument, format!("segment {index} out of range ({})", schedule.segments.len()))
        })?;
        *out = CsSegment {
            start: seg.start,
            end: seg.end,
            target_rate: seg.target_rate,
            cold_active: seg.cold_active,
            warm_active: seg.warm_active,
        };
        Ok(())
    })
}

/// Integral of the target rate over the schedule, °C.
/// `schedule` must be a live handle; `out` valid or null.
#[no_mangle]
pub unsafe extern "C" fn cs_schedule_integrated_delta(schedule: *const CsSchedule, out: *mut f64) -> CsStatus {
    guard(|| {
        let delta = deref(schedule, "schedule")?.0.integrated_delta();
        *deref_mut(out, "out")? = delta;
        Ok(())
    })
}

/// `schedule` must come from [`cs_schedule_compile`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cs_schedule_free(schedule: *mut CsSchedule) {
    if !schedule.is_null() {
        drop(Box::from_raw(schedule));
    }
}

// ---- plant -----------------------------------------------------------------

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CsPlantParams {
    pub a_v_true: f64,
    pub b_v_true: f64,
    pub a_l_true: f64,
    pub b_l_true: f64,
    pub combined_bias: f64,
    pub relax_coeff: f64,
    pub t_neutral: f64,
    pub t_init: f64,
    pub noise_sigma: f64,
}

impl From<PlantParams> for CsPlantParams {
    fn from(p: PlantParams) -> Self {
        CsPlantParams {
            a_v_true: p.a_v_true,
            b_v_true: p.b_v_true,
            a_l_true: p.a_l_true,
            b_l_true: p.b_l_true,
            combined_bias: p.combined_bias,
            relax_coeff: p.relax_coeff,
            t_neutral: p.t_neutral,
            t_init: p.t_init,
            noise_sigma: p.noise_sigma,
        }
    }
}

impl From<&CsPlantParams> for PlantParams {
    fn from(p: &CsPlantParams) -> Self {
        PlantParams {
            a_v_true: p.a_v_true,
            b_v_true: p.b_v_true,
            a_l_true: p.a_l_true,
            b_l_true: p.b_l_true,
            combined_bias: p.combined_bias,
            relax_coeff: p.relax_coeff,
            t_neutral: p.t_neutral,
            t_init: p.t_init,
            noise_sigma: p.noise_sigma,
        }
    }
}

/// Simulated skin patch under the display.
pub struct CsPlant(Plant);

#[no_mangle]
pub extern "C" fn cs_plant_params_default() -> CsPlantParams {
    PlantParams::default().into()
}

/// Default parameters without relaxation or noise.
#[no_mangle]
pub extern "C" fn cs_plant_params_affine() -> CsPlantParams {
    PlantParams::affine().into()
}

/// `params` must be valid or null; `out` receives a handle owned by the caller.
#[no_mangle]
pub unsafe extern "C" fn cs_plant_new(params: *const CsPlantParams, seed: u64, out: *mut *mut CsPlant) -> CsStatus {
    guard(|| {
        let params = PlantParams::from(deref(params, "params")?);
        let out = deref_mut(out, "out")?;
        *out = Box::into_raw(Box::new(CsPlant(Plant::new(params, seed)?)));
        Ok(())
    })
}

/// Advance the plant by one Euler step of `dt` seconds.
/// `plant` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cs_plant_step(
    plant: *mut CsPlant,
    duty_valve: f64,
    duty_led: f64,
    valve_on: bool,
    led_on: bool,
    dt: f64,
) -> CsStatus {
    guard(|| {
        let plant = &mut deref_mut(plant, "plant")?.0;
        plant.step(&Actuation { duty_valve, duty_led, valve_on, led_on }, dt)?;
        Ok(())
    })
}

/// True skin temperature, °C.
/// `plant` must be a live handle; `out` valid or null.
#[no_mangle]
pub unsafe extern "C" fn cs_plant_temperature(plant: *const CsPlant, out: *mut f64) -> CsStatus {
    guard(|| {
        let temp = deref(plant, "plant")?.0.temperature();
        *deref_mut(out, "out")? = temp;
        Ok(())
    })
}

/// Simulated time since creation, s.
/// `plant` must be a live handle; `out` valid or null.
#[no_mangle]
pub unsafe extern "C" fn cs_plant_time(plant: *const CsPlant, out: *mut f64) -> CsStatus {
    guard(|| {
        let time = deref(plant, "plant")?.0.time();
        *deref_mut(out, "out")? = time;
        Ok(())
    })
}

/// Temperature quantized to `resolution` °C.
/// `plant` must be a live handle; `out` valid or null.
#[no_mangle]
pub unsafe extern "C" fn cs_plant_read_sensor(plant: *const CsPlant, resolution: f64, out: *mut f64) -> CsStatus {
    guard(|| {
        let plant = &deref(plant, "plant")?.0;
        let out = deref_mut(out, "out")?;
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Failure(CsStatus::InvalidArgument, format!("sensor resolution {resolution} must be positive")));
        }
        *out = plant.read_sensor(resolution).value();
        Ok(())
    })
}

/// `plant` must come from [`cs_plant_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cs_plant_free(plant: *mut CsPlant) {
    if !plant.is_null() {
        drop(Box::from_raw(plant));
    }
}

// ---- calibration and closed-loop simulation --------------------------------

/// `rate = a * duty + b` on `[duty_min, duty_max]`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CsDutyModel {
    pub a: f64,
    pub b: f64,
    pub duty_min: f64,
    pub duty_max: f64,
    pub r_squared: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CsChannelModels {
    pub valve: CsDutyModel,
    pub led: CsDutyModel,
}

impl From<ChannelModels> for CsChannelModels {
    fn from(m: ChannelModels) -> Self {
        let conv = |d: DutyModel| CsDutyModel { a: d.a, b: d.b, duty_min: d.duty_min, duty_max: d.duty_max, r_squared: d.r_squared };
        CsChannelModels { valve: conv(m.valve), led: conv(m.led) }
    }
}

impl CsChannelModels {
    fn to_models(self) -> Result<ChannelModels, Failure> {
        let conv = |channel, d: CsDutyModel| -> Result<DutyModel, Failure> {
            let model = DutyModel { r_squared: d.r_squared, ..DutyModel::new(channel, d.a, d.b) };
            Ok(model.with_range(d.duty_min, d.duty_max)?)
        };
        Ok(ChannelModels { valve: conv(Channel::Valve, self.valve)?, led: conv(Channel::Led, self.led)? })
    }
}

/// Models matching a plant's hidden truth, ignoring relaxation.
/// `params` and `out` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn cs_models_exact(params: *const CsPlantParams, out: *mut CsChannelModels) -> CsStatus {
    guard(|| {
        let params = PlantParams::from(deref(params, "params")?);
        *deref_mut(out, "out")? = ChannelModels::exact(&params).into();
        Ok(())
    })
}

/// Calibrate both channels against a fresh plant with the default protocol.
/// `iterations` may be null.
/// Pointers must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn cs_calibrate(
    params: *const CsPlantParams,
    seed: u64,
    out: *mut CsChannelModels,
    iterations: *mut usize,
) -> CsStatus {
    guard(|| {
        let params = PlantParams::from(deref(params, "params")?);
        let out = deref_mut(out, "out")?;
        let mut plant = Plant::new(params, seed)?;
        let outcome = control::calibrate(&mut plant, &CalibrationProtocol::default())?;
        *out = outcome.models.into();
        if let Some(it) = iterations.as_mut() {
            *it = outcome.iterations;
        }
        Ok(())
    })
}

/// Logged temperature trace of one closed-loop presentation.
pub struct CsTrace(ControlRun);

/// Render `schedule` with `models` and drive a fresh plant through it.
/// Pointers must be valid or null; `out` receives a handle owned by the caller.
#[no_mangle]
pub unsafe extern "C" fn cs_simulate(
    schedule: *const CsSchedule,
    models: *const CsChannelModels,
    params: *const CsPlantParams,
    seed: u64,
    dt: f64,
    log_rate: f64,
    out: *mut *mut CsTrace,
) -> CsStatus {
    guard(|| {
        let schedule = &deref(schedule, "schedule")?.0;
        let models = deref(models, "models")?.to_models()?;
        let params = PlantParams::from(deref(params, "params")?);
        let out = deref_mut(out, "out")?;
        let timeline = control::schedule_to_timeline(schedule, &models)?;
        let run = control::run_control(&timeline, &mut Plant::new(params, seed)?, dt, log_rate)?;
        *out = Box::into_raw(Box::new(CsTrace(run)));
        Ok(())
    })
}

/// Number of logged samples, 0 for a null handle.
/// `trace` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cs_trace_len(trace: *const CsTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.0.samples.len())
}

/// Net temperature change from start to end, °C.
/// `trace` must be a live handle; `out` valid or null.
#[no_mangle]
pub unsafe extern "C" fn cs_trace_net_delta(trace: *const CsTrace, out: *mut f64) -> CsStatus {
    guard(|| {
        let delta = deref(trace, "trace")?.0.net_delta();
        *deref_mut(out, "out")? = delta;
        Ok(())
    })
}

/// Copy the logged temperatures into `buf`. Fails with `BufferTooSmall`
/// when `capacity` is less than [`cs_trace_len`].
/// `buf` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn cs_trace_temperatures(trace: *const CsTrace, buf: *mut f64, capacity: usize) -> CsStatus {
    guard(|| {
        let samples = &deref(trace, "trace")?.0.samples;
        if capacity < samples.len() {
            return Err(Failure(
                CsStatus::BufferTooSmall,
                format!("need {} doubles, got {capacity}", samples.len()),
            ));
        }
        if samples.is_empty() {
            return Ok(());
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        let dst = slice::from_raw_parts_mut(buf, samples.len());
        for (d, s) in dst.iter_mut().zip(samples) {
            *d = s.temp;
        }
        Ok(())
    })
}

/// `trace` must come from [`cs_simulate`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cs_trace_free(trace: *mut CsTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

// ---- statistics ------------------------------------------------------------

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsMethod {
    KruskalWallis = 1,
    WilcoxonExact = 2,
    WilcoxonNormal = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CsTestResult {
    pub statistic: f64,
    /// Degrees of freedom, or -1 when the test has none.
    pub df: i32,
    pub p_value: f64,
    pub method: CsMethod,
}

impl From<stats::TestResult> for CsTestResult {
    fn from(r: stats::TestResult) -> Self {
        CsTestResult {
            statistic: r.statistic,
            df: r.df.map_or(-1, |d| d as i32),
            p_value: r.p_value,
            method: match r.method {
                stats::Method::KruskalWallis => CsMethod::KruskalWallis,
                stats::Method::WilcoxonExact => CsMethod::WilcoxonExact,
                stats::Method::WilcoxonNormal => CsMethod::WilcoxonNormal,
            },
        }
    }
}

/// Kruskal-Wallis H over groups laid out back to back in `values`;
/// `group_sizes` holds `n_groups` lengths summing to the total.
/// `values` must hold the summed group sizes; `group_sizes` must hold `n_groups` entries.
#[no_mangle]
pub unsafe extern "C" fn cs_kruskal_wallis(
    values: *const f64,
    group_sizes: *const usize,
    n_groups: usize,
    out: *mut CsTestResult,
) -> CsStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        if n_groups > 0 && group_sizes.is_null() {
            return Err(null("group_sizes"));
        }
        let sizes = if n_groups == 0 { &[][..] } else { slice::from_raw_parts(group_sizes, n_groups) };
        let total = sizes
            .iter()
            .try_fold(0usize, |acc, &n| acc.checked_add(n))
            .ok_or_else(|| Failure(CsStatus::InvalidArgument, "group sizes overflow".into()))?;
        let values = array(values, total, "values")?;
        let mut groups = Vec::with_capacity(n_groups);
        let mut start = 0;
        for &n in sizes {
            groups.push(&values[start..start + n]);
            start += n;
        }
        *out = stats::kruskal_wallis(&groups)?.into();
        Ok(())
    })
}

/// Wilcoxon rank-sum test; the statistic is U for `a`.
/// `a` and `b` must hold `na` and `nb` doubles.
#[no_mangle]
pub unsafe extern "C" fn cs_wilcoxon_rank_sum(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    out: *mut CsTestResult,
) -> CsStatus {
    guard(|| {
        let a = array(a, na, "a")?;
        let b = array(b, nb, "b")?;
        *deref_mut(out, "out")? = stats::wilcoxon_rank_sum(a, b)?.into();
        Ok(())
    })
}

/// Benjamini-Hochberg adjusted p-values, written to `out` in input order.
/// `p_values` and `out` must each hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn cs_benjamini_hochberg(p_values: *const f64, n: usize, out: *mut f64) -> CsStatus {
    guard(|| {
        let p = array(p_values, n, "p_values")?;
        let adjusted = stats::benjamini_hochberg(p)?;
        if out.is_null() {
            return Err(null("out"));
        }
        slice::from_raw_parts_mut(out, n).copy_from_slice(&adjusted);
        Ok(())
    })
}

/// Upper tail of the chi-square distribution.
/// `out` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn cs_chi_square_sf(x: f64, df: u32, out: *mut f64) -> CsStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = stats::chi_square_sf(x, df)?;
        Ok(())
    })
}
