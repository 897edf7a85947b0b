//! Acceptance criteria, one line per criterion. Exits nonzero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use coldsense::control::{calibrate, run_control, schedule_to_timeline, CalibrationProtocol, ChannelModels};
use coldsense::experiment::{
    analyze_exp2, analyze_exp3, run_full, ExperimentConfig, ExperimentKind, ParticipantModel, Pooling,
};
use coldsense::pattern::{compile_schedule, derive_pattern, RateSchedule, StimulusKind, StimulusSpec};
use coldsense::plant::{Plant, PlantParams, DEFAULT_DT_S};
use coldsense::stats::{benjamini_hochberg, chi_square_sf, kruskal_wallis, wilcoxon_rank_sum};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn ac1() -> Outcome {
    let start = Instant::now();
    let d = derive_pattern(&StimulusSpec::alternating(-0.1, 0.5)).map_err(|e| e.to_string())?;
    check((d.cooling_time - 0.6).abs() <= 1e-9, format!("t_c = {}", d.cooling_time))?;
    check((d.cycle_time - 1.2).abs() <= 1e-9, format!("t = {}", d.cycle_time))?;
    check((d.warming_rate - 0.2).abs() <= 1e-9, format!("v_h = {}", d.warming_rate))?;

    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let n = 10_000;
    for i in 0..n {
        let vc = rng.random_range(-0.5..-0.01);
        let ratio = rng.random_range(0.05..0.95);
        let swing = rng.random_range(0.01..0.2);
        let duration = rng.random_range(1.0..30.0);
        let spec = StimulusSpec::alternating(vc, ratio).with_swing(swing).with_duration(duration);
        let d = derive_pattern(&spec).map_err(|e| format!("spec {i}: {e}"))?;

        // heat balance: cooling and warming legs move the skin by the same swing
        let down = vc * d.cooling_time;
        let up = d.relative_warming_rate * d.warming_time();
        check((down + swing).abs() <= 1e-12 && (up - swing).abs() <= 1e-12, format!("spec {i}: legs {down} / {up}"))?;
        check((d.warming_rate - (d.relative_warming_rate - vc)).abs() <= 1e-12, format!("spec {i}: v_h"))?;

        // commanded schedule nets zero over whole cycles
        let schedule = compile_schedule(&spec).map_err(|e| e.to_string())?;
        let cycles = (duration / d.cycle_time + 1e-9).floor();
        let net = schedule.integrated_delta_until(cycles * d.cycle_time);
        check(net.abs() <= 1e-12 * (cycles + 1.0), format!("spec {i}: whole-cycle net {net}"))?;

        // warming rate grows with cooling ratio and with cooling magnitude
        let more_ratio = derive_pattern(&StimulusSpec { cooling_ratio: (ratio + 0.01).min(0.99), ..spec }).unwrap();
        let more_rate = derive_pattern(&StimulusSpec { cooling_rate: vc * 1.1, ..spec }).unwrap();
        check(more_ratio.warming_rate > d.warming_rate && more_rate.warming_rate > d.warming_rate, format!("spec {i}: monotonicity"))?;

        // CSV round trip preserves the schedule exactly
        let mut buf = Vec::new();
        schedule.write_csv(&mut buf).map_err(|e| e.to_string())?;
        let back = RateSchedule::read_csv(buf.as_slice()).map_err(|e| e.to_string())?;
        check(back.segments == schedule.segments, format!("spec {i}: round trip"))?;
    }
    let elapsed = start.elapsed().as_secs_f64();
    check(elapsed < 1.0, format!("took {elapsed:.2} s"))?;
    Ok(format!("worked example exact, {n} random specs, {elapsed:.2} s"))
}

fn ac2() -> Outcome {
    let start = Instant::now();

    // noiseless affine plant read through an ideal sensor
    let truth = PlantParams::affine();
    let ideal = CalibrationProtocol { sensor_resolution: None, ..CalibrationProtocol::default() };
    let out = calibrate(&mut Plant::new(truth, 1).unwrap(), &ideal).map_err(|e| e.to_string())?;
    let (v, l) = (out.models.valve, out.models.led);
    check((v.r_squared - 1.0).abs() <= 1e-9 && (l.r_squared - 1.0).abs() <= 1e-9, format!("R² {} / {}", v.r_squared, l.r_squared))?;
    for (got, want) in [(v.a, truth.a_v_true), (v.b, truth.b_v_true), (l.a, truth.a_l_true), (l.b, truth.b_l_true)] {
        check((got - want).abs() <= 1e-6, format!("coefficient {got} vs {want}"))?;
    }

    // process noise of 0.01 °C/s with the quantizing sensor
    let noisy = PlantParams { noise_sigma: 0.01, ..PlantParams::affine() };
    let protocol = CalibrationProtocol::default();
    let within: Vec<bool> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let out = calibrate(&mut Plant::new(noisy, seed).unwrap(), &protocol).ok()?;
            let rel_v = (out.models.valve.a - noisy.a_v_true).abs() / noisy.a_v_true.abs();
            let rel_l = (out.models.led.a - noisy.a_l_true).abs() / noisy.a_l_true.abs();
            Some(rel_v <= 0.05 && rel_l <= 0.05)
        })
        .map(|r| r.unwrap_or(false))
        .collect();
    let hits = within.iter().filter(|&&b| b).count();
    check(hits >= 95, format!("slope within 5 % on {hits}/100 seeds"))?;

    // combined-stimulus warm bias hidden from single-channel measurements
    let biased = PlantParams { combined_bias: 0.013, ..PlantParams::default() };
    let out = calibrate(&mut Plant::new(biased, 3).unwrap(), &protocol).map_err(|e| e.to_string())?;
    let worst = out.final_net_deltas().iter().fold(0.0f64, |m, d| m.max(d.abs()));
    check(out.iterations <= 3, format!("{} iterations", out.iterations))?;
    check(worst <= 0.1, format!("worst net ΔT {worst}"))?;

    let elapsed = start.elapsed().as_secs_f64();
    check(elapsed < 5.0, format!("took {elapsed:.2} s"))?;
    Ok(format!(
        "exact fit, noisy slopes {hits}/100, bias loop {} iterations (worst |ΔT| {worst:.3} °C), {elapsed:.2} s",
        out.iterations
    ))
}

fn ac3() -> Outcome {
    let params = PlantParams::affine();
    let models = ChannelModels::exact(&params);
    let config = ExperimentConfig::default();
    let mut worst: f64 = 0.0;
    let mut worst_integral: f64 = 0.0;
    for &vc in &config.cooling_rates {
        for &ratio in &config.cooling_ratios {
            let d = derive_pattern(&StimulusSpec::alternating(vc, ratio)).unwrap();
            let whole = (15.0 / d.cycle_time + 1e-9).floor() * d.cycle_time;
            let spec = StimulusSpec::alternating(vc, ratio).with_duration(whole);
            let schedule = compile_schedule(&spec).map_err(|e| e.to_string())?;
            worst_integral = worst_integral.max(schedule.integrated_delta().abs());
            let timeline = schedule_to_timeline(&schedule, &models).map_err(|e| e.to_string())?;
            let mut plant = Plant::new(params, 0).unwrap();
            let run = run_control(&timeline, &mut plant, DEFAULT_DT_S, 100.0).map_err(|e| e.to_string())?;
            worst = worst.max(run.net_delta().abs());
        }
    }
    check(worst <= 0.02, format!("worst net |ΔT| {worst}"))?;
    check(worst_integral <= 1e-12, format!("commanded integral {worst_integral}"))?;
    Ok(format!("25 cells, worst net |ΔT| {worst:.2e} °C, worst commanded integral {worst_integral:.1e} °C"))
}

/// Two-sided p by listing every assignment of the pooled ranks.
fn enumerated_p(a: &[f64], b: &[f64]) -> f64 {
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let rank = |x: f64| pooled.iter().position(|&y| y == x).unwrap() as f64 + 1.0;
    let n = pooled.len();
    let k = a.len();
    let observed: f64 = a.iter().map(|&x| rank(x)).sum();
    let (mut lo, mut hi, mut total) = (0u64, 0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let s: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| i as f64 + 1.0).sum();
        total += 1;
        lo += (s <= observed) as u64;
        hi += (s >= observed) as u64;
    }
    (2.0 * lo.min(hi) as f64 / total as f64).min(1.0)
}

fn stepwise_bh(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&i, &j| p[i].total_cmp(&p[j]));
    let mut out = vec![0.0; m];
    for (r, &i) in idx.iter().enumerate() {
        let q = (r..m).map(|s| p[idx[s]] * m as f64 / (s + 1) as f64).fold(f64::INFINITY, f64::min);
        out[i] = q.min(1.0);
    }
    out
}

fn ac4() -> Outcome {
    let kw = kruskal_wallis(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0]]).map_err(|e| e.to_string())?;
    check((kw.statistic - 7.2).abs() <= 1e-12, format!("H = {}", kw.statistic))?;

    let mut cases = 0;
    for n in 2..=10usize {
        for mask in 1u32..(1 << n) - 1 {
            let a: Vec<f64> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| i as f64 * 1.5 - 3.0).collect();
            let b: Vec<f64> = (0..n).filter(|i| mask & (1 << i) == 0).map(|i| i as f64 * 1.5 - 3.0).collect();
            let got = wilcoxon_rank_sum(&a, &b).map_err(|e| e.to_string())?.p_value;
            let want = enumerated_p(&a, &b);
            check((got - want).abs() <= 1e-12, format!("n={n} mask={mask:b}: {got} vs {want}"))?;
            cases += 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for i in 0..10_000 {
        let m = rng.random_range(1..30);
        let p: Vec<f64> = (0..m).map(|_| if rng.random_bool(0.1) { 1.0 } else { rng.random::<f64>().powi(3) }).collect();
        let got = benjamini_hochberg(&p).map_err(|e| e.to_string())?;
        let want = stepwise_bh(&p);
        for (g, w) in got.iter().zip(&want) {
            check((g - w).abs() <= 1e-12, format!("vector {i}: {g} vs {w}"))?;
        }
    }

    let sf = chi_square_sf(7.2, 2).map_err(|e| e.to_string())?;
    check((sf - (-3.6f64).exp()).abs() <= 1e-12, format!("sf = {sf}"))?;
    Ok(format!("H = 7.2, {cases} exact Wilcoxon cases, 10000 BH vectors, χ² sf exact"))
}

struct Runs {
    exp2: Result<(f64, Vec<coldsense::experiment::TrialRecord>), String>,
}

fn ac5(runs: &Runs) -> Outcome {
    let (elapsed, records) = runs.exp2.as_ref().map_err(|e| e.clone())?;
    check(records.len() == 1575, format!("{} records", records.len()))?;
    let report = analyze_exp2(records, Pooling::Trial, 0.05).map_err(|e| e.to_string())?;
    let ratio = report.s1_by_ratio.as_ref().ok_or("no ratio test")?;
    let rate = report.s1_by_rate.as_ref().ok_or("no rate test")?;
    check(ratio.test.df == Some(4) && rate.test.df == Some(4), "df != 4")?;
    let m = &report.pairwise.first().ok_or("no pairwise matrices")?.matrix;
    for i in 0..m.labels.len() {
        for j in 0..m.labels.len() {
            if i != j {
                let (raw, adj) = (m.p_raw[i][j].ok_or("missing p")?, m.p_adjusted[i][j].ok_or("missing q")?);
                check(adj >= raw && Some(adj) == m.p_adjusted[j][i], "pairwise matrix not BH-adjusted and symmetric")?;
            }
        }
    }
    check(*elapsed < 60.0, format!("pipeline took {elapsed:.1} s"))?;
    Ok(format!(
        "1575 records, KW ratio H={:.1} rate H={:.1} (df 4), {} pairwise matrices, {elapsed:.1} s",
        ratio.test.statistic,
        rate.test.statistic,
        report.pairwise.len()
    ))
}

fn ac6(runs: &Runs) -> Outcome {
    let (_, records) = runs.exp2.as_ref().map_err(|e| e.clone())?;
    let report = analyze_exp2(records, Pooling::Trial, 0.05).map_err(|e| e.to_string())?;
    let at_half: Vec<(f64, f64)> = report
        .cells
        .iter()
        .filter(|c| c.kind == StimulusKind::S1 && c.cooling_ratio == Some(0.5))
        .map(|c| (c.cooling_rate, c.persistent_trial_pct))
        .collect();
    check(at_half.len() == 5, "missing λ = 0.5 cells")?;
    // rates run from −0.08 to −0.24
    for w in at_half.windows(2) {
        check(w[1].0 < w[0].0 && w[1].1 >= w[0].1, format!("persistence drops from {:?} to {:?}", w[0], w[1]))?;
    }

    let config = ExperimentConfig::default();
    let (_, exp3) = run_full(
        ExperimentKind::Exp3,
        &config,
        &PlantParams::default(),
        &CalibrationProtocol::default(),
        &ParticipantModel::default(),
        11,
    )
    .map_err(|e| e.to_string())?;
    let r3 = analyze_exp3(&exp3, Pooling::Trial, 0.05).map_err(|e| e.to_string())?;
    let mean = |id: &str| r3.groups.iter().find(|g| g.stimulus_id == id).map(|g| g.mean).ok_or(format!("no group {id}"));
    let (s3, s1) = (mean("S3_-0.16")?, mean("S1_-0.16_0.50")?);
    check(s3 >= s1, format!("S3 mean rating {s3} < S1 {s1}"))?;
    let pct: Vec<String> = at_half.iter().map(|(_, p)| format!("{p:.0}")).collect();
    Ok(format!("persistent % at λ=0.5: [{}]; rating S3 {s3:.2} ≥ S1 {s1:.2}", pct.join(", ")))
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_coldsense"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(())
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push((path.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn ac7() -> Outcome {
    let invocations: [&[&str]; 6] = [
        &["design", "--kind", "S1", "--vc", "-0.1", "--ratio", "0.5", "--out", "sched.csv", "--timeline", "timeline.csv"],
        &["--seed", "5", "calibrate", "--out", "models.json", "--report", "calibration.json"],
        &["--seed", "5", "simulate", "--schedule", "sched.csv", "--models", "models.json", "--out", "trace.csv"],
        &["--seed", "7", "experiment-run", "--exp", "3", "--participants", "4", "--out", "exp3"],
        &["--seed", "7", "experiment-run", "--exp", "2", "--participants", "2", "--repetitions", "1", "--out", "exp2"],
        &["experiment-analyze", "--run", "exp2", "--out", "report.json", "--pooling", "participant"],
    ];
    let mut snaps = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        for args in invocations {
            run_cli(dir.path(), args)?;
        }
        snaps.push(snapshot(dir.path()));
    }
    check(!snaps[0].is_empty(), "no artifacts")?;
    let names: Vec<&String> = snaps[0].iter().map(|(n, _)| n).collect();
    check(names == snaps[1].iter().map(|(n, _)| n).collect::<Vec<_>>(), "artifact sets differ")?;
    for ((name, a), (_, b)) in snaps[0].iter().zip(&snaps[1]) {
        check(a == b, format!("{name} differs between runs"))?;
    }
    Ok(format!("{} artifacts byte-identical across two runs", snaps[0].len()))
}

fn main() {
    let exp2_start = Instant::now();
    let runs = Runs {
        exp2: run_full(
            ExperimentKind::Exp2,
            &ExperimentConfig::default(),
            &PlantParams::default(),
            &CalibrationProtocol::default(),
            &ParticipantModel::default(),
            7,
        )
        .map(|(_, records)| (exp2_start.elapsed().as_secs_f64(), records))
        .map_err(|e| e.to_string()),
    };

    let results: Vec<(&str, &str, Outcome)> = vec![
        ("AC1", "pattern algebra", ac1()),
        ("AC2", "calibration closed loop", ac2()),
        ("AC3", "zero residual heat", ac3()),
        ("AC4", "statistics oracles", ac4()),
        ("AC5", "experiment pipeline shape", ac5(&runs)),
        ("AC6", "synthetic perception ordering", ac6(&runs)),
        ("AC7", "CLI determinism", ac7()),
    ];
    let mut failed = 0;
    for (id, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("[PASS] {id} {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {id} {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
