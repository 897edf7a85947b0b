//! Command-line front end. Every command prints exactly one JSON status line
//! on stdout; diagnostics go to stderr.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::control::{
    calibrate, run_control, schedule_to_timeline, CalibrationProtocol, ChannelModels, ModelFile,
};
use crate::error::{Error, Result};
use crate::experiment::{
    analyze_exp2, analyze_exp3, read_run, run_full, write_run, ExperimentConfig, ExperimentKind, ParticipantModel,
    Pooling,
};
use crate::io::write_atomic;
use crate::pattern::{compile_schedule, derive_pattern, RateSchedule, Severity, StimulusKind, StimulusSpec};
use crate::plant::{write_trace_csv, Plant, PlantConfig, DEFAULT_DT_S};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "coldsense", version, about = "Cold-sensation stimulus design, calibration and simulated experiments")]
pub struct Cli {
    /// JSON file with optional `plant`, `protocol`, `participant` and `experiment` sections
    #[arg(long, global = true, value_name = "JSON")]
    pub config: Option<PathBuf>,

    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Suppress diagnostics on stderr (errors are still reported)
    #[arg(long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compile a stimulus into a rate schedule, optionally also an actuator timeline
    #[command(allow_negative_numbers = true)]
    Design {
        #[command(flatten)]
        stimulus: StimulusArgs,
        /// Schedule CSV
        #[arg(long)]
        out: PathBuf,
        /// Also write the actuator duty timeline CSV
        #[arg(long)]
        timeline: Option<PathBuf>,
        /// Model JSON from `calibrate`; defaults to the plant's exact response
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Fit duty models against the simulated plant
    Calibrate {
        /// Model JSON
        #[arg(long)]
        out: PathBuf,
        /// Full calibration record (points and iterations) as JSON
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Drive the plant through a stimulus and log the temperature trace
    #[command(allow_negative_numbers = true)]
    Simulate {
        #[command(flatten)]
        stimulus: StimulusArgs,
        /// Use a schedule CSV from `design` instead of stimulus flags
        #[arg(long, conflicts_with_all = ["kind", "vc"])]
        schedule: Option<PathBuf>,
        #[arg(long)]
        models: Option<PathBuf>,
        /// Trace CSV
        #[arg(long)]
        out: PathBuf,
        /// Integration step, s
        #[arg(long, default_value_t = DEFAULT_DT_S)]
        dt: f64,
        /// Logging rate, Hz
        #[arg(long, default_value_t = 100.0)]
        log_rate: f64,
    },
    /// Recruit synthetic participants and run experiment 2 or 3
    ExperimentRun {
        #[arg(long, value_parser = parse_experiment)]
        exp: ExperimentKind,
        #[arg(long)]
        participants: Option<usize>,
        #[arg(long)]
        repetitions: Option<usize>,
        /// Run directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Analyse a run directory into a JSON report
    ExperimentAnalyze {
        /// Run directory from `experiment-run`
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_pooling)]
        pooling: Option<Pooling>,
        #[arg(long)]
        fdr: Option<f64>,
    },
}

#[derive(Debug, Args)]
pub struct StimulusArgs {
    #[arg(long, value_parser = parse_kind)]
    pub kind: Option<StimulusKind>,
    /// Cooling rate v_c, °C/s (negative)
    #[arg(long)]
    pub vc: Option<f64>,
    /// Cooling time ratio (S1)
    #[arg(long, default_value_t = 0.5)]
    pub ratio: f64,
    /// Per-cycle swing, °C (S1)
    #[arg(long = "delta-t", default_value_t = crate::pattern::DEFAULT_SWING_C)]
    pub delta_t: f64,
    /// s
    #[arg(long, default_value_t = crate::pattern::DEFAULT_DURATION_S)]
    pub duration: f64,
    /// Initial drop length, s (S2)
    #[arg(long, default_value_t = crate::pattern::DEFAULT_DROP_S)]
    pub drop_duration: f64,
}

impl StimulusArgs {
    fn spec(&self) -> Result<StimulusSpec> {
        let kind = self.kind.ok_or_else(|| Error::invalid("--kind is required"))?;
        let vc = self.vc.ok_or_else(|| Error::invalid("--vc is required"))?;
        let base = match kind {
            StimulusKind::S1 => StimulusSpec::alternating(vc, self.ratio),
            StimulusKind::S2 => StimulusSpec::drop_and_hold(vc),
            StimulusKind::S3 => StimulusSpec::continuous(vc),
        };
        Ok(base.with_swing(self.delta_t).with_duration(self.duration).with_drop_duration(self.drop_duration))
    }
}

fn parse_kind(s: &str) -> std::result::Result<StimulusKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_experiment(s: &str) -> std::result::Result<ExperimentKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_pooling(s: &str) -> std::result::Result<Pooling, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Sections of the `--config` file. Missing sections take defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub plant: PlantConfig,
    pub protocol: CalibrationProtocol,
    pub participant: ParticipantModel,
    pub experiment: ExperimentConfig,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Config::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::invalid(format!("{}: {e}", p.display())))?;
                Ok(serde_json::from_str(&text)?)
            }
        }
    }
}

struct Ctx<'a> {
    quiet: bool,
    stderr: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn note(&mut self, msg: impl AsRef<str>) {
        if !self.quiet {
            let _ = writeln!(self.stderr, "{}", msg.as_ref());
        }
    }
}

fn json_bytes<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

fn load_models(path: Option<&Path>, config: &Config) -> Result<(ChannelModels, &'static str)> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::invalid(format!("{}: {e}", p.display())))?;
            let file: ModelFile = serde_json::from_str(&text)?;
            Ok((file.models(), "file"))
        }
        None => Ok((ChannelModels::exact(&config.plant.params), "exact")),
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn execute(cli: &Cli, ctx: &mut Ctx<'_>) -> Result<Map<String, Value>> {
    let config = Config::load(cli.config.as_deref())?;
    let mut status = Map::new();
    match &cli.command {
        Command::Design { stimulus, out, timeline, models } => {
            let spec = stimulus.spec()?;
            for issue in spec.validate() {
                if issue.severity == Severity::Warning {
                    ctx.note(format!("warning: {}", issue.message));
                }
            }
            let schedule = compile_schedule(&spec)?;
            let mut csv = Vec::new();
            schedule.write_csv(&mut csv)?;
            let mut outputs = vec![(out.clone(), csv)];
            if let Some(path) = timeline {
                let (models, source) = load_models(models.as_deref(), &config)?;
                let mut bytes = Vec::new();
                schedule_to_timeline(&schedule, &models)?.write_csv(&mut bytes)?;
                outputs.push((path.clone(), bytes));
                status.insert("models".into(), json!(source));
            }
            for (path, bytes) in &outputs {
                write_atomic(path, bytes)?;
            }
            if spec.kind == StimulusKind::S1 {
                status.insert("derived".into(), serde_json::to_value(derive_pattern(&spec)?)?);
            }
            status.insert("segments".into(), json!(schedule.segments.len()));
            status.insert("outputs".into(), json!(outputs.iter().map(|(p, _)| path_str(p)).collect::<Vec<_>>()));
        }
        Command::Calibrate { out, report } => {
            let mut plant = Plant::new(config.plant.params, cli.seed)?;
            let outcome = calibrate(&mut plant, &config.protocol)?;
            let file = ModelFile::from_outcome(&outcome, &config.protocol);
            let model_bytes = json_bytes(&file)?;
            let report_bytes = report
                .as_ref()
                .map(|_| {
                    json_bytes(&json!({
                        "baseline_rate": outcome.baseline_rate,
                        "iterations": outcome.iterations,
                        "valve_points": outcome.valve_points,
                        "led_points": outcome.led_points,
                        "history": outcome.history,
                    }))
                })
                .transpose()?;
            write_atomic(out, &model_bytes)?;
            if let (Some(path), Some(bytes)) = (report, report_bytes) {
                write_atomic(path, &bytes)?;
            }
            ctx.note(format!(
                "calibrated in {} iteration(s): valve a={:.4} b={:.4}, led a={:.4} b={:.4}",
                outcome.iterations, file.valve.model.a, file.valve.model.b, file.led.model.a, file.led.model.b
            ));
            status.insert("iterations".into(), json!(outcome.iterations));
            status.insert("net_deltas".into(), json!(outcome.final_net_deltas()));
            status.insert("out".into(), json!(path_str(out)));
        }
        Command::Simulate { stimulus, schedule, models, out, dt, log_rate } => {
            let schedule = match schedule {
                Some(p) => {
                    let f = fs::File::open(p).map_err(|e| Error::invalid(format!("{}: {e}", p.display())))?;
                    RateSchedule::read_csv(f)?
                }
                None => compile_schedule(&stimulus.spec()?)?,
            };
            let (models, source) = load_models(models.as_deref(), &config)?;
            let timeline = schedule_to_timeline(&schedule, &models)?;
            let mut plant = Plant::new(config.plant.params, cli.seed)?;
            let run = run_control(&timeline, &mut plant, *dt, *log_rate)?;
            let mut bytes = Vec::new();
            write_trace_csv(&run.samples, &mut bytes)?;
            write_atomic(out, &bytes)?;
            status.insert("models".into(), json!(source));
            status.insert("samples".into(), json!(run.samples.len()));
            status.insert("net_delta".into(), json!(run.net_delta()));
            status.insert("out".into(), json!(path_str(out)));
        }
        Command::ExperimentRun { exp, participants, repetitions, out } => {
            let mut exp_config = config.experiment.clone();
            if let Some(n) = participants {
                exp_config.participants = *n;
            }
            if let Some(n) = repetitions {
                exp_config.repetitions = *n;
            }
            ctx.note(format!("running {exp} with {} participants", exp_config.participants));
            let (manifest, records) =
                run_full(*exp, &exp_config, &config.plant.params, &config.protocol, &config.participant, cli.seed)?;
            write_run(out, &manifest, &records)?;
            status.insert("experiment".into(), json!(exp));
            status.insert("participants".into(), json!(manifest.participants.len()));
            status.insert("trials".into(), json!(records.len()));
            status.insert("out".into(), json!(path_str(out)));
        }
        Command::ExperimentAnalyze { run, out, pooling, fdr } => {
            let (manifest, records) = read_run(run)?;
            let pooling = pooling.unwrap_or(manifest.config.pooling);
            let fdr = fdr.unwrap_or(manifest.config.fdr);
            let report = match manifest.experiment {
                ExperimentKind::Exp2 => serde_json::to_value(analyze_exp2(&records, pooling, fdr)?)?,
                ExperimentKind::Exp3 => serde_json::to_value(analyze_exp3(&records, pooling, fdr)?)?,
                ExperimentKind::Exp1 => return Err(Error::invalid("run directory holds no perception trials")),
            };
            let bytes = json_bytes(&json!({
                "experiment": manifest.experiment,
                "seed": manifest.seed,
                "trials": records.len(),
                "report": report,
            }))?;
            write_atomic(out, &bytes)?;
            status.insert("experiment".into(), json!(manifest.experiment));
            status.insert("trials".into(), json!(records.len()));
            status.insert("out".into(), json!(path_str(out)));
        }
    }
    Ok(status)
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Design { .. } => "design",
        Command::Calibrate { .. } => "calibrate",
        Command::Simulate { .. } => "simulate",
        Command::ExperimentRun { .. } => "experiment-run",
        Command::ExperimentAnalyze { .. } => "experiment-analyze",
    }
}

fn emit(stdout: &mut dyn Write, mut status: Map<String, Value>, ok: bool, command: Option<&str>) {
    let mut line = Map::new();
    line.insert("status".into(), json!(if ok { "ok" } else { "error" }));
    if let Some(c) = command {
        line.insert("command".into(), json!(c));
    }
    line.insert("timestamp".into(), json!(humantime::format_rfc3339_millis(SystemTime::now()).to_string()));
    line.append(&mut status);
    let _ = writeln!(stdout, "{}", Value::Object(line));
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run_with<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return EXIT_OK;
            }
            let _ = write!(stderr, "{e}");
            let mut status = Map::new();
            status.insert("exit_code".into(), json!(EXIT_VALIDATION));
            status.insert("error".into(), json!(e.kind().to_string()));
            emit(stdout, status, false, None);
            return EXIT_VALIDATION;
        }
    };
    let name = command_name(&cli.command);
    let mut ctx = Ctx { quiet: cli.quiet, stderr };
    match execute(&cli, &mut ctx) {
        Ok(status) => {
            emit(stdout, status, true, Some(name));
            EXIT_OK
        }
        Err(e) => {
            let code = if e.is_validation() { EXIT_VALIDATION } else { EXIT_RUNTIME };
            let _ = writeln!(ctx.stderr, "error: {e}");
            let mut status = Map::new();
            status.insert("exit_code".into(), json!(code));
            status.insert("error".into(), json!(e.to_string()));
            emit(stdout, status, false, Some(name));
            code
        }
    }
}

pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}
