//! Empirical convergence of particle-system estimators in `N`.
//!
//! A particle system of size `N` yields one estimate per estimator (an
//! average over its particles). Repeating this over independent systems
//! gives the mean squared error against a pooled reference and the
//! fit `-½ log mse = α log N + β + ε`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Result, SliError};
use crate::estimators::{asian_payoff, longest_gap, ScalarEstimate};
use crate::exec::map_indices;
use crate::factor::FactorDynamics;
use crate::model::SliModel;
use crate::particle::{run_system, EngineOptions, PathRecord};
use crate::rng::{derive_seed, replication_seed};

/// A functional of the particle empirical measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Estimator {
    /// Fraction of particles with `X_T = level`.
    PmfPoint { level: usize },
    /// Particle average of the Asian payoff.
    Asian { strike: f64 },
    /// Particle average of the longest jump-free interval.
    Tau,
}

impl Estimator {
    pub fn name(&self) -> String {
        match self {
            Estimator::PmfPoint { level } => format!("pmf-point-{level}"),
            Estimator::Asian { .. } => "asian".into(),
            Estimator::Tau => "tau".into(),
        }
    }

    /// Value of the estimator on one particle system.
    pub fn evaluate(&self, paths: &[PathRecord], horizon: f64) -> f64 {
        let n = paths.len() as f64;
        match *self {
            Estimator::PmfPoint { level } => paths.iter().filter(|p| p.x_terminal == level).count() as f64 / n,
            Estimator::Asian { strike } => paths.iter().map(|p| asian_payoff(p, strike, horizon)).sum::<f64>() / n,
            Estimator::Tau => paths.iter().map(|p| longest_gap(p, horizon)).sum::<f64>() / n,
        }
    }
}

/// Everything needed to simulate a system apart from its size and seed.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub model: SliModel,
    pub dynamics: FactorDynamics,
    /// Engine options; `n` is overridden per run.
    pub engine: EngineOptions,
}

impl SystemSpec {
    /// Estimates of every estimator on one system of `n` particles.
    pub fn estimates(&self, n: usize, seed: u64, estimators: &[Estimator]) -> Result<Vec<f64>> {
        let mut opts = self.engine.clone();
        opts.n = n;
        // replications are already spread over the pool
        opts.parallel = false;
        let run = run_system(&self.model, &self.dynamics, &opts, seed)?;
        let horizon = self.model.horizon();
        Ok(estimators.iter().map(|e| e.evaluate(&run.paths, horizon)).collect())
    }

    /// `reps` independent systems of size `n`; row `r` holds the estimates of system `r`.
    pub fn replicate(
        &self,
        n: usize,
        reps: usize,
        seed: u64,
        estimators: &[Estimator],
        parallel: bool,
    ) -> Result<Vec<Vec<f64>>> {
        map_indices(reps, parallel, |r| {
            self.estimates(n, replication_seed(seed, r as u64), estimators)
        })
        .into_iter()
        .collect()
    }
}

/// Seed tag of the reference systems.
const REFERENCE_TAG: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reference {
    pub n_large: usize,
    pub reps: usize,
    pub estimates: Vec<ScalarEstimate>,
}

/// Pooled mean over `reps` independent systems of `n_large` particles.
pub fn build_reference(
    spec: &SystemSpec,
    estimators: &[Estimator],
    n_large: usize,
    reps: usize,
    seed: u64,
    parallel: bool,
) -> Result<Reference> {
    if reps == 0 {
        return Err(SliError::Domain("reference needs at least one system".into()));
    }
    let rows = spec.replicate(n_large, reps, derive_seed(seed, REFERENCE_TAG), estimators, parallel)?;
    let estimates = (0..estimators.len())
        .map(|e| {
            let col: Vec<f64> = rows.iter().map(|r| r[e]).collect();
            ScalarEstimate::mean(&col)
        })
        .collect();
    Ok(Reference {
        n_large,
        reps,
        estimates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub n_values: Vec<usize>,
    pub reps_per_n: usize,
    pub estimators: Vec<Estimator>,
}

impl ConvergenceStudy {
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.n_values.is_empty() {
            v.push("n_values is empty".to_string());
        }
        if self.n_values.windows(2).any(|w| w[0] >= w[1]) {
            v.push("n_values must be strictly increasing".to_string());
        }
        if self.n_values.first() == Some(&0) {
            v.push("n_values must be positive".to_string());
        }
        if self.reps_per_n < 2 {
            v.push(format!("reps_per_n >= 2: got {}", self.reps_per_n));
        }
        if self.estimators.is_empty() {
            v.push("no estimator selected".to_string());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(SliError::InvalidParams(v))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegressionResult {
    pub alpha: f64,
    pub beta: f64,
    /// Population variance of the residuals.
    pub resid_var: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MseRow {
    pub n: usize,
    pub mse: f64,
    pub n_reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorStudy {
    pub estimator: Estimator,
    pub reference: ScalarEstimate,
    pub rows: Vec<MseRow>,
    /// `N` values left out of the fit because their mse was 0.
    pub excluded: Vec<usize>,
    pub regression: RegressionResult,
    pub spearman: SpearmanResult,
}

/// Runs the study against `reference` (one entry per estimator).
pub fn run_study(
    study: &ConvergenceStudy,
    spec: &SystemSpec,
    reference: &Reference,
    seed: u64,
    parallel: bool,
) -> Result<Vec<EstimatorStudy>> {
    study.validate()?;
    if reference.estimates.len() != study.estimators.len() {
        return Err(SliError::Domain("reference does not match the estimator list".into()));
    }
    let k = study.estimators.len();
    let mut sq = vec![Vec::with_capacity(study.n_values.len()); k];
    for &n in &study.n_values {
        let rows = spec.replicate(
            n,
            study.reps_per_n,
            derive_seed(seed, n as u64),
            &study.estimators,
            parallel,
        )?;
        for e in 0..k {
            let r = reference.estimates[e].value;
            let mse = rows.iter().map(|row| (row[e] - r).powi(2)).sum::<f64>() / rows.len() as f64;
            sq[e].push(MseRow {
                n,
                mse,
                n_reps: rows.len(),
            });
        }
    }
    sq.into_iter()
        .enumerate()
        .map(|(e, rows)| {
            let (kept, excluded): (Vec<&MseRow>, Vec<&MseRow>) = rows.iter().partition(|r| r.mse > 0.0);
            let xs: Vec<f64> = kept.iter().map(|r| (r.n as f64).ln()).collect();
            let ys: Vec<f64> = kept.iter().map(|r| -0.5 * r.mse.ln()).collect();
            let regression = ols(&xs, &ys)?;
            let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
            let mses: Vec<f64> = rows.iter().map(|r| r.mse).collect();
            Ok(EstimatorStudy {
                estimator: study.estimators[e],
                reference: reference.estimates[e],
                excluded: excluded.iter().map(|r| r.n).collect(),
                rows,
                regression,
                spearman: spearman(&ns, &mses)?,
            })
        })
        .collect()
}

/// Least-squares line `y = α x + β`.
pub fn ols(xs: &[f64], ys: &[f64]) -> Result<RegressionResult> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(SliError::Domain(format!(
            "regression needs two or more paired points, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(SliError::Domain("regressor has no spread".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let alpha = sxy / sxx;
    let beta = my - alpha * mx;
    let resid_var = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - alpha * x - beta).powi(2))
        .sum::<f64>()
        / n;
    Ok(RegressionResult { alpha, beta, resid_var })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpearmanResult {
    pub rho: f64,
    /// One-sided p-value for a negative association (t approximation).
    pub p_negative: f64,
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation, ties given average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<SpearmanResult> {
    if a.len() != b.len() || a.len() < 3 {
        return Err(SliError::Domain("spearman needs three or more paired points".into()));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return Ok(SpearmanResult {
            rho: 0.0,
            p_negative: 1.0,
        });
    }
    let rho = cov / (va * vb).sqrt();
    let df = n - 2.0;
    let p_negative = if rho <= -1.0 {
        0.0
    } else if rho >= 1.0 {
        1.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        StudentsT::new(0.0, 1.0, df).expect("df > 0").cdf(t)
    };
    Ok(SpearmanResult { rho, p_negative })
}

/// Standardised sample with its shape statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CltReport {
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation used for the scaling.
    pub std: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub standardized: Vec<f64>,
    /// Set when the sample has zero spread; the moments are then NaN.
    pub degenerate: bool,
}

impl CltReport {
    /// Standard errors of skewness and excess kurtosis under normality.
    pub fn normal_stderrs(&self) -> (f64, f64) {
        let n = self.n as f64;
        ((6.0 / n).sqrt(), (24.0 / n).sqrt())
    }
}

/// Centres and scales `samples`, and reports skewness and excess kurtosis.
pub fn clt_histogram(samples: &[f64]) -> Result<CltReport> {
    if samples.len() < 2 {
        return Err(SliError::Domain("need at least two samples".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 0.0) {
        return Ok(CltReport {
            n: samples.len(),
            mean,
            std: 0.0,
            skewness: f64::NAN,
            excess_kurtosis: f64::NAN,
            standardized: Vec::new(),
            degenerate: true,
        });
    }
    let z: Vec<f64> = samples.iter().map(|x| (x - mean) / std).collect();
    let skewness = z.iter().map(|v| v.powi(3)).sum::<f64>() / n;
    let excess_kurtosis = z.iter().map(|v| v.powi(4)).sum::<f64>() / n - 3.0;
    Ok(CltReport {
        n: samples.len(),
        mean,
        std,
        skewness,
        excess_kurtosis,
        standardized: z,
        degenerate: false,
    })
}

/// Runs `n_systems` systems of `n_particles` and standardises one estimator.
pub fn clt_study(
    spec: &SystemSpec,
    estimator: Estimator,
    n_particles: usize,
    n_systems: usize,
    seed: u64,
    parallel: bool,
) -> Result<CltReport> {
    let rows = spec.replicate(n_particles, n_systems, seed, &[estimator], parallel)?;
    let samples: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    clt_histogram(&samples)
}
