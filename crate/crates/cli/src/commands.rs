//! Experiment commands. Each writes its artifacts plus `manifest.json` and
//! returns a one-line summary.

use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::Serialize;
use serde_json::json;

use sli_core::convergence::{build_reference, ols, run_study, SystemSpec};
use sli_core::discrete::{empirical_joint, simulate_joint_ctmc_paths, solve_fp, PhiTable};
use sli_core::estimators::{asian_payoff, marginal_pmf, tau_cdf_with, tv_distance, ScalarEstimate};
use sli_core::exec::with_threads;
use sli_core::li::{binomial_pmf, simulate_li_paths};
use sli_core::rng::replication_seed;
use sli_core::{run_system, Algorithm, ConvergenceStudy, FpOptions, InitialLaw, LocalIntensity, PathRecord};

use crate::config::{ExperimentConfig, Process};
use crate::output::{fmt_f64, format_tau_table, OutDir};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Simulate paths; writes paths.csv and hist.bin.
    Simulate,
    /// Terminal loss distribution; writes pmf.csv.
    Marginals,
    /// Asian payoff on the loss path; writes asian.csv.
    Asian,
    /// Distribution of the longest jump-free interval; writes tau_cdf.csv.
    TauCdf,
    /// Error decay in N; writes mse.csv and regression.json.
    Convergence,
    /// Discrete-factor forward equation; writes fp.csv and fp_marginals.csv.
    FokkerPlanck,
    /// Naive vs improved timings; writes bench.json.
    Bench,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Marginals => "marginals",
            Command::Asian => "asian",
            Command::TauCdf => "tau-cdf",
            Command::Convergence => "convergence",
            Command::FokkerPlanck => "fokker-planck",
            Command::Bench => "bench",
        }
    }
}

/// Version string in `git describe` style.
pub fn version() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'static str,
    version: String,
    config_hash: String,
    seed: u64,
    threads: Option<usize>,
    started_unix: u64,
    wall_clock_seconds: f64,
    defaults_applied: Vec<String>,
    artifacts: Vec<String>,
    summary: &'a str,
    config: &'a ExperimentConfig,
}

/// Runs `cmd` with the (already validated) config and writes into `out`.
pub fn dispatch(cmd: Command, cfg: &ExperimentConfig, out: &Path, threads: Option<usize>) -> Result<String> {
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let clock = Instant::now();
    let mut dir = OutDir::create(out)?;
    let summary = with_threads(threads, || match cmd {
        Command::Simulate => simulate(cfg, &mut dir),
        Command::Marginals => marginals(cfg, &mut dir),
        Command::Asian => asian(cfg, &mut dir),
        Command::TauCdf => tau(cfg, &mut dir),
        Command::Convergence => convergence(cfg, &mut dir),
        Command::FokkerPlanck => fokker_planck(cfg, &mut dir),
        Command::Bench => bench(cfg, &mut dir),
    })?;
    let mut artifacts = dir.artifacts().to_vec();
    artifacts.push("manifest.json".into());
    let manifest = Manifest {
        command: cmd.name(),
        version: version(),
        config_hash: cfg.hash(),
        seed: cfg.engine.seed,
        threads,
        started_unix: started,
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
        defaults_applied: cfg.defaults_applied(),
        artifacts,
        summary: &summary,
        config: cfg,
    };
    dir.write_json("manifest.json", &manifest)?;
    Ok(summary)
}

/// Paths of replication `rep` under the configured process.
fn replication_paths(cfg: &ExperimentConfig, rep: usize) -> Result<Vec<PathRecord>> {
    let model = cfg.sli_model()?;
    let seed = replication_seed(cfg.engine.seed, rep as u64);
    match cfg.experiment.process {
        Process::Sli => Ok(run_system(&model, &cfg.dynamics()?, &cfg.engine_options(), seed)?.paths),
        Process::Li => {
            let x0 = match cfg.engine.initial {
                InitialLaw::Dirac { x0 } => x0,
                _ => bail!("engine.initial: the local-intensity chain needs a Dirac initial level"),
            };
            Ok(simulate_li_paths(&model, x0, cfg.engine.n, seed, cfg.engine.parallel)?)
        }
    }
}

fn all_paths(cfg: &ExperimentConfig) -> Result<Vec<Vec<PathRecord>>> {
    (0..cfg.engine.replications)
        .map(|r| replication_paths(cfg, r))
        .collect()
}

fn process_name(cfg: &ExperimentConfig) -> &'static str {
    match cfg.experiment.process {
        Process::Sli => "SLI",
        Process::Li => "LI",
    }
}

fn simulate(cfg: &ExperimentConfig, dir: &mut OutDir) -> Result<String> {
    let reps = all_paths(cfg)?;
    let levels = cfg.model.m + 1;
    let mut counts = vec![0u64; levels];
    let mut rows = Vec::new();
    for (r, paths) in reps.iter().enumerate() {
        for (i, p) in paths.iter().enumerate() {
            counts[p.x_terminal] += 1;
            for t in &p.jump_times {
                rows.push(vec![r.to_string(), i.to_string(), fmt_f64(*t)]);
            }
        }
    }
    let jumps = rows.len();
    dir.write_csv("paths.csv", &["replication", "particle", "jump_time"], rows)?;
    dir.write_histogram("hist.bin", &counts)?;
    let total: u64 = counts.iter().sum();
    let mean = counts
        .iter()
        .enumerate()
        .map(|(k, c)| k as f64 * *c as f64)
        .sum::<f64>()
        / total as f64;
    dir.write_json(
        "summary.json",
        &json!({"process": process_name(cfg), "replications": reps.len(), "paths": total, "jumps": jumps, "mean_terminal_loss": mean}),
    )?;
    Ok(format!(
        "simulate: {} {} paths over {} replication(s), {jumps} jumps, mean X_T = {mean:.4}",
        total,
        process_name(cfg),
        reps.len()
    ))
}

fn marginals(cfg: &ExperimentConfig, dir: &mut OutDir) -> Result<String> {
    let paths: Vec<PathRecord> = all_paths(cfg)?.into_iter().flatten().collect();
    let levels = cfg.model.m + 1;
    let pmf = marginal_pmf(&paths, levels)?;
    let intensity = cfg.intensity();
    let from_zero = matches!(cfg.engine.initial, InitialLaw::Dirac { x0: 0 });
    let oracle = match intensity {
        LocalIntensity::LinearDecay { .. } if from_zero => Some(binomial_pmf(&intensity, cfg.model.horizon)?),
        _ => None,
    };
    let rows = (0..levels).map(|k| {
        let mut row = vec![k.to_string(), fmt_f64(pmf.probs[k]), fmt_f64(pmf.stderr[k])];
        if let Some(o) = &oracle {
            row.push(fmt_f64(o[k]));
        }
        row
    });
    let header: &[&str] = if oracle.is_some() {
        &["level", "probability", "stderr", "binomial"]
    } else {
        &["level", "probability", "stderr"]
    };
    dir.write_csv("pmf.csv", header, rows)?;
    let tv = oracle.as_ref().map(|o| tv_distance(&pmf.probs, o));
    dir.write_json(
        "summary.json",
        &json!({"process": process_name(cfg), "samples": pmf.n_samples, "tv_to_binomial": tv}),
    )?;
    Ok(match tv {
        Some(tv) => format!(
            "marginals: {} {} paths, TV distance to binomial oracle = {tv:.5}",
            pmf.n_samples,
            process_name(cfg)
        ),
        None => format!(
            "marginals: {} {} paths (no closed-form oracle)",
            pmf.n_samples,
            process_name(cfg)
        ),
    })
}

fn asian(cfg: &ExperimentConfig, dir: &mut OutDir) -> Result<String> {
    let strike = cfg
        .experiment
        .strike
        .context("experiment.strike: required for the asian command")?;
    let horizon = cfg.model.horizon;
    let reps = all_paths(cfg)?;
    let per_rep: Vec<ScalarEstimate> = reps
        .iter()
        .map(|ps| {
            let v: Vec<f64> = ps.iter().map(|p| asian_payoff(p, strike, horizon)).collect();
            ScalarEstimate::mean(&v)
        })
        .collect();
    dir.write_csv(
        "asian.csv",
        &["replication", "estimate", "stderr"],
        per_rep
            .iter()
            .enumerate()
            .map(|(r, e)| vec![r.to_string(), fmt_f64(e.value), fmt_f64(e.stderr)]),
    )?;
    let pooled: Vec<f64> = reps
        .iter()
        .flatten()
        .map(|p| asian_payoff(p, strike, horizon))
        .collect();
    let e = ScalarEstimate::mean(&pooled);
    dir.write_json(
        "summary.json",
        &json!({"strike": strike, "pooled": e, "replications": per_rep}),
    )?;
    Ok(format!(
        "asian: K = {strike}, price = {:.6} ± {:.6} (2σ) over {} paths",
        e.value,
        2.0 * e.stderr,
        e.n_samples
    ))
}

fn tau(cfg: &ExperimentConfig, dir: &mut OutDir) -> Result<String> {
    let th = cfg.tau_thresholds();
    let paths: Vec<PathRecord> = all_paths(cfg)?.into_iter().flatten().collect();
    let cdf = tau_cdf_with(&paths, &th, cfg.model.horizon, cfg.experiment.gap_convention)?;
    dir.write_csv(
        "tau_cdf.csv",
        &["threshold", "probability", "two_stderr"],
        th.iter()
            .zip(&cdf)
            .map(|(s, e)| vec![fmt_f64(*s), fmt_f64(e.value), fmt_f64(2.0 * e.stderr)]),
    )?;
    let table: Vec<(f64, f64, f64)> = th.iter().zip(&cdf).map(|(s, e)| (*s, e.value, e.stderr)).collect();
    let text = format_tau_table(&table);
    print!("{text}");
    dir.write_json(
        "summary.json",
        &json!({"process": process_name(cfg), "samples": paths.len(), "gap_convention": cfg.experiment.gap_convention, "cdf": cdf}),
    )?;
    Ok(format!(
        "tau-cdf: {} {} paths, {} thresholds",
        paths.len(),
        process_name(cfg),
        th.len()
    ))
}

fn convergence(cfg: &ExperimentConfig, dir: &mut OutDir) -> Result<String> {
    if cfg.experiment.process != Process::Sli {
        bail!("experiment.process: convergence studies run on the particle system");
    }
    let c = cfg
        .experiment
        .convergence
        .as_ref()
        .context("experiment.convergence: section required")?;
    let spec = SystemSpec {
        model: cfg.sli_model()?,
        dynamics: cfg.dynamics()?,
        engine: cfg.engine_options(),
    };
    let study = ConvergenceStudy {
        n_values: c.n_values.clone(),
        reps_per_n: c.reps_per_n,
        estimators: c.estimators.clone(),
    };
    let parallel = cfg.engine.parallel;
    let seed = cfg.engine.seed;
    let reference = build_reference(
        &spec,
        &study.estimators,
        c.reference_n,
        c.reference_reps,
        seed,
        parallel,
    )?;
    let results = run_study(&study, &spec, &reference, seed, parallel)?;
    let mut rows = Vec::new();
    for r in &results {
        for row in &r.rows {
            rows.push(vec![
                r.estimator.name(),
                row.n.to_string(),
                fmt_f64(row.mse),
                row.n_reps.to_string(),
            ]);
        }
    }
    dir.write_csv("mse.csv", &["estimator", "n", "mse", "replications"], rows)?;
    dir.write_json("regression.json", &results)?;
    let parts: Vec<String> = results
        .iter()
        .map(|r| format!("{} α = {:.4}", r.estimator.name(), r.regression.alpha))
        .collect();
    Ok(format!("convergence: {}", parts.join(", ")))
}

fn fokker_planck(cfg: &ExperimentConfig, dir: &mut OutDir) -> Result<String> {
    let dm = cfg.discrete_model()?;
    let d = cfg.discrete.as_ref().expect("checked by discrete_model");
    let horizon = cfg.model.horizon;
    let mut opts = FpOptions::new(d.dt);
    opts.record_every = d.record_every;
    let p0 = dm.dirac(d.x0, d.y0)?;
    let traj = solve_fp(&dm, &p0, horizon, &opts)?;
    let (levels, states) = (dm.m() + 1, dm.states());
    let mut rows = Vec::new();
    for s in &traj.states {
        for i in 0..levels {
            for j in 0..states {
                rows.push(vec![fmt_f64(s.t), i.to_string(), j.to_string(), fmt_f64(s.get(i, j))]);
            }
        }
    }
    dir.write_csv("fp.csv", &["t", "level", "state", "probability"], rows)?;
    let last = traj.last();
    let mx = last.marginal_x();
    dir.write_csv(
        "fp_marginals.csv",
        &["level", "probability"],
        mx.iter().enumerate().map(|(k, p)| vec![k.to_string(), fmt_f64(*p)]),
    )?;
    let mut worst_z = None;
    if d.ctmc_paths > 0 {
        let table = PhiTable::from_trajectory(&dm, &traj);
        let paths = simulate_joint_ctmc_paths(
            &dm,
            d.x0,
            d.y0,
            horizon,
            &table,
            d.ctmc_paths,
            cfg.engine.seed,
            cfg.engine.parallel,
        )?;
        let emp = empirical_joint(&paths, levels, states);
        let n = d.ctmc_paths as f64;
        let z = emp
            .iter()
            .zip(&last.p)
            .filter(|(_, p)| **p > 0.0 && **p < 1.0)
            .map(|(e, p)| (e - p).abs() / (p * (1.0 - p) / n).sqrt())
            .fold(0.0, f64::max);
        worst_z = Some(z);
    }
    dir.write_json(
        "summary.json",
        &json!({
            "min_entry": traj.min_entry,
            "max_mass_error": traj.max_mass_error,
            "lipschitz_constant": dm.lipschitz_constant(),
            "ctmc_paths": d.ctmc_paths,
            "ctmc_max_z": worst_z,
        }),
    )?;
    let mut line = format!(
        "fokker-planck: {} steps to T = {horizon}, min entry {:.2e}, mass error {:.2e}",
        (horizon / d.dt).ceil(),
        traj.min_entry,
        traj.max_mass_error
    );
    if let Some(z) = worst_z {
        line.push_str(&format!(", CTMC worst deviation {z:.2}σ"));
    }
    Ok(line)
}

#[derive(Debug, Serialize)]
struct BenchRow {
    n: usize,
    naive_seconds: f64,
    improved_seconds: f64,
    ratio: f64,
}

fn bench(cfg: &ExperimentConfig, dir: &mut OutDir) -> Result<String> {
    let model = cfg.sli_model()?;
    let dynamics = cfg.dynamics()?;
    let (ns, repeats) = match &cfg.experiment.bench {
        Some(b) => (b.n_values.clone(), b.repeats),
        None => (vec![cfg.engine.n], 1),
    };
    let seed = replication_seed(cfg.engine.seed, 0);
    let time = |n: usize, alg: Algorithm| -> Result<f64> {
        let mut opts = cfg.engine_options().algorithm(alg);
        opts.n = n;
        let mut best = f64::INFINITY;
        for _ in 0..repeats {
            let start = Instant::now();
            let run = run_system(&model, &dynamics, &opts, seed)?;
            best = best.min(start.elapsed().as_secs_f64());
            std::hint::black_box(run.stats.accepted);
        }
        Ok(best)
    };
    let mut rows = Vec::new();
    for &n in &ns {
        let naive = time(n, Algorithm::Naive)?;
        let improved = time(n, Algorithm::Improved)?;
        rows.push(BenchRow {
            n,
            naive_seconds: naive,
            improved_seconds: improved,
            ratio: naive / improved,
        });
    }
    let slope = |f: fn(&BenchRow) -> f64| -> Option<f64> {
        let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| f(r).ln()).collect();
        ols(&xs, &ys).ok().map(|r| r.alpha)
    };
    let (e_naive, e_imp) = (slope(|r| r.naive_seconds), slope(|r| r.improved_seconds));
    dir.write_json(
        "bench.json",
        &json!({"repeats": repeats, "rows": rows, "naive_exponent": e_naive, "improved_exponent": e_imp}),
    )?;
    let last = rows.last().expect("at least one size");
    Ok(format!(
        "bench: N = {}: naive {:.3}s, improved {:.3}s, ratio {:.1}",
        last.n, last.naive_seconds, last.improved_seconds, last.ratio
    ))
}
