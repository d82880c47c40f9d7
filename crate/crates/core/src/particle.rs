//! The interacting particle system, simulated as one event-driven loop.
//!
//! Proposals arrive system-wide at rate `N λ̄ f̄ / f_`; each proposal picks a
//! particle uniformly and accepts with probability
//!
//! ```text
//! R = (f_ / (λ̄ f̄)) λ(t'-, X^I) f(Y^I) N^{X^I} / D^{X^I}
//! ```
//!
//! where `N^j` counts the particles at level `j` and `D^j` sums their weights.
//! [`Algorithm::Naive`] rescans all particles at every proposal, while
//! [`Algorithm::Improved`] keeps `(N^j, D^j)` in an [`AggregateTable`], updates
//! it in O(1) at accepted jumps and rebuilds it at the grid dates.
//!
//! Particle state is kept as parallel arrays. Each particle draws from two
//! private streams (Brownian increments, acceptance uniforms) and the loop
//! itself owns the proposal stream, so both algorithms consume identical
//! randomness.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SliError};
use crate::factor::FactorDynamics;
use crate::model::{SliModel, WeightFn};
use crate::rng::{exponential, particle_stream, system_stream, SimRng, StreamRole};

/// Strategy used to evaluate the conditional expectation in the ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Full O(N) scan at every proposal.
    Naive,
    /// Incremental aggregates rebuilt at the grid dates.
    #[default]
    Improved,
}

/// Law of `X_0`; `Y_0` is always the factor's `y0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialLaw {
    Dirac {
        x0: usize,
    },
    /// Independent draws of `X_0` from a pmf over `{0..M}`.
    Product {
        x_pmf: Vec<f64>,
    },
}

impl Default for InitialLaw {
    fn default() -> Self {
        InitialLaw::Dirac { x0: 0 }
    }
}

impl InitialLaw {
    fn validate(&self, m: usize) -> Result<()> {
        match self {
            InitialLaw::Dirac { x0 } if *x0 > m => {
                Err(SliError::Domain(format!("initial level {x0} outside {{0..{m}}}")))
            }
            InitialLaw::Product { x_pmf } => {
                if x_pmf.len() != m + 1 {
                    return Err(SliError::Domain(format!(
                        "initial pmf has {} entries, expected {}",
                        x_pmf.len(),
                        m + 1
                    )));
                }
                if x_pmf.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                    return Err(SliError::Domain("initial pmf has negative entries".into()));
                }
                let s: f64 = x_pmf.iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(SliError::Domain(format!("initial pmf sums to {s}")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self {
            InitialLaw::Dirac { x0 } => *x0,
            InitialLaw::Product { x_pmf } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (x, p) in x_pmf.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return x;
                    }
                }
                // rounding left a sliver above the last partial sum
                x_pmf.iter().rposition(|p| *p > 0.0).unwrap_or(0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineOptions {
    pub n: usize,
    pub d: usize,
    pub algorithm: Algorithm,
    /// Rebuild the aggregates after every accepted jump (improved only).
    pub forced_recompute: bool,
    /// Collect ratio bounds, conservation checks and aggregate drift.
    pub audit: bool,
    pub record_y_grid: bool,
    pub initial: InitialLaw,
    /// Advance the factors in parallel at grid dates.
    pub parallel: bool,
}

impl EngineOptions {
    pub fn new(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            algorithm: Algorithm::Improved,
            forced_recompute: false,
            audit: false,
            record_y_grid: false,
            initial: InitialLaw::default(),
            parallel: cfg!(feature = "parallel"),
        }
    }

    pub fn algorithm(mut self, a: Algorithm) -> Self {
        self.algorithm = a;
        self
    }

    pub fn forced_recompute(mut self, on: bool) -> Self {
        self.forced_recompute = on;
        self
    }

    pub fn audit(mut self, on: bool) -> Self {
        self.audit = on;
        self
    }

    pub fn record_y_grid(mut self, on: bool) -> Self {
        self.record_y_grid = on;
        self
    }

    pub fn initial(mut self, law: InitialLaw) -> Self {
        self.initial = law;
        self
    }

    pub fn parallel(mut self, on: bool) -> Self {
        self.parallel = on;
        self
    }
}

/// Per-level particle counts `N^j` and weight sums `D^j`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateTable {
    pub count: Vec<u64>,
    pub fsum: Vec<f64>,
}

impl AggregateTable {
    pub fn zeros(levels: usize) -> Self {
        Self {
            count: vec![0; levels],
            fsum: vec![0.0; levels],
        }
    }

    /// Table built from scratch, summing in particle order.
    pub fn from_particles(levels: usize, xs: &[u32], ys: &[f64], weight: &WeightFn) -> Self {
        let mut t = Self::zeros(levels);
        t.recompute(xs, ys, weight);
        t
    }

    pub fn recompute(&mut self, xs: &[u32], ys: &[f64], weight: &WeightFn) {
        self.count.fill(0);
        self.fsum.fill(0.0);
        for (&x, &y) in xs.iter().zip(ys) {
            self.count[x as usize] += 1;
            self.fsum[x as usize] += weight.eval(y);
        }
    }

    pub fn total(&self) -> u64 {
        self.count.iter().sum()
    }
}

/// One particle's trajectory summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub jump_times: Vec<f64>,
    pub x_initial: usize,
    pub x_terminal: usize,
    /// `Y` at the grid dates `s_0..s_D`, when requested.
    pub y_grid: Option<Vec<f64>>,
}

impl PathRecord {
    pub fn new(x_initial: usize, jump_times: Vec<f64>) -> Self {
        Self {
            x_terminal: x_initial + jump_times.len(),
            x_initial,
            jump_times,
            y_grid: None,
        }
    }
}

/// Diagnostics gathered during a run. Ratio and drift fields are only
/// populated in audit mode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStats {
    pub proposals: u64,
    pub accepted: u64,
    pub grid_dates: u64,
    pub ratio_evaluations: u64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// Largest `|D^j_incremental - D^j_fresh|` seen before a grid rebuild.
    pub max_fsum_drift: f64,
    pub conservation_checks: u64,
    /// Grid dates where the maintained counts differed from a fresh tally.
    pub count_mismatches: u64,
}

impl Default for RunStats {
    fn default() -> Self {
        Self {
            proposals: 0,
            accepted: 0,
            grid_dates: 0,
            ratio_evaluations: 0,
            min_ratio: f64::INFINITY,
            max_ratio: f64::NEG_INFINITY,
            max_fsum_drift: 0.0,
            conservation_checks: 0,
            count_mismatches: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SystemRun {
    pub paths: Vec<PathRecord>,
    pub stats: RunStats,
}

/// State of the particle system between events.
#[derive(Debug, Clone)]
pub struct ParticleSystem {
    model: SliModel,
    dynamics: FactorDynamics,
    opts: EngineOptions,
    pub xs: Vec<u32>,
    pub ys: Vec<f64>,
    pub t_last: Vec<f64>,
    brownian: Vec<SimRng>,
    decision: Vec<SimRng>,
    system: SimRng,
    pub aggregates: AggregateTable,
    /// Current event-loop time.
    pub t: f64,
    grid: Vec<f64>,
    /// Index of the last grid date reached.
    k: usize,
    x_initial: Vec<u32>,
    events: Vec<(u32, f64)>,
    y_grid: Option<Vec<f64>>,
    pub stats: RunStats,
}

impl ParticleSystem {
    /// Builds the initial configuration for replication seed `seed`.
    pub fn new(model: &SliModel, dynamics: &FactorDynamics, opts: &EngineOptions, seed: u64) -> Result<Self> {
        if opts.n == 0 {
            return Err(SliError::Domain("particle count must be >= 1".into()));
        }
        if opts.n > u32::MAX as usize {
            return Err(SliError::Domain("particle count exceeds u32 range".into()));
        }
        if opts.d == 0 {
            return Err(SliError::Domain("grid size D must be >= 1".into()));
        }
        dynamics.validate()?;
        let m = model.m();
        opts.initial.validate(m)?;

        let n = opts.n;
        let y0 = dynamics.y0();
        let xs: Vec<u32> = match &opts.initial {
            InitialLaw::Dirac { x0 } => vec![*x0 as u32; n],
            law => (0..n)
                .map(|i| law.sample(&mut particle_stream(seed, i, StreamRole::Initial)) as u32)
                .collect(),
        };
        let ys = vec![y0; n];
        let brownian = (0..n).map(|i| particle_stream(seed, i, StreamRole::Brownian)).collect();
        let decision = (0..n).map(|i| particle_stream(seed, i, StreamRole::Decision)).collect();

        let horizon = model.horizon();
        let d = opts.d;
        let mut grid: Vec<f64> = (0..=d).map(|k| horizon * k as f64 / d as f64).collect();
        grid[d] = horizon;

        let aggregates = AggregateTable::from_particles(m + 1, &xs, &ys, &model.weight);
        let y_grid = opts.record_y_grid.then(|| {
            let mut g = vec![f64::NAN; n * (d + 1)];
            g[..n].copy_from_slice(&ys);
            g
        });

        Ok(Self {
            model: model.clone(),
            dynamics: dynamics.clone(),
            opts: opts.clone(),
            x_initial: xs.clone(),
            xs,
            ys,
            t_last: vec![0.0; n],
            brownian,
            decision,
            system: system_stream(seed),
            aggregates,
            t: 0.0,
            grid,
            k: 0,
            events: Vec::new(),
            y_grid,
            stats: RunStats::default(),
        })
    }

    pub fn n(&self) -> usize {
        self.xs.len()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Index of the last grid date every particle has been advanced to.
    pub fn grid_index(&self) -> usize {
        self.k
    }

    /// Next proposal time and candidate particle, both from the system stream.
    pub fn propose_next_event(&mut self) -> (f64, usize) {
        let rate = self.n() as f64 * self.model.params.thinning_rate();
        let tp = self.t + exponential(&mut self.system, rate);
        let i = self.system.random_range(0..self.n());
        (tp, i)
    }

    /// Advances every factor to grid date `k` and, for the improved
    /// algorithm, rebuilds the aggregates.
    pub fn advance_to_grid(&mut self, k: usize) {
        if self.opts.audit && self.opts.algorithm == Algorithm::Improved {
            self.audit_aggregates();
        }
        let s = self.grid[k];
        let li = &self.model.intensity;
        let dynamics = &self.dynamics;
        advance_all(
            &mut self.ys,
            &mut self.t_last,
            &self.xs,
            &mut self.brownian,
            self.opts.parallel,
            |y, tl, x, rng| {
                *y = dynamics.advance(*y, x as usize, *tl, s, li, rng);
                *tl = s;
            },
        );

        self.k = k;
        self.t = s;
        self.stats.grid_dates += 1;
        if let Some(g) = self.y_grid.as_mut() {
            let n = self.xs.len();
            g[k * n..(k + 1) * n].copy_from_slice(&self.ys);
        }
        if self.opts.algorithm == Algorithm::Improved {
            self.aggregates.recompute(&self.xs, &self.ys, &self.model.weight);
        }
    }

    /// Compares the maintained aggregates with a fresh tally of the current
    /// particles.
    fn audit_aggregates(&mut self) {
        let fresh = AggregateTable::from_particles(self.aggregates.count.len(), &self.xs, &self.ys, &self.model.weight);
        if fresh.count != self.aggregates.count {
            self.stats.count_mismatches += 1;
        }
        let drift = self
            .aggregates
            .fsum
            .iter()
            .zip(&fresh.fsum)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        self.stats.max_fsum_drift = self.stats.max_fsum_drift.max(drift);
    }

    /// Advances through every grid date strictly before `t_prop` (capped at `T`).
    fn advance_grid_until(&mut self, t_prop: f64) {
        let d = self.grid.len() - 1;
        while self.k < d && t_prop > self.grid[self.k + 1] {
            self.advance_to_grid(self.k + 1);
        }
    }

    /// `(N^x, D^x)` for level `x` under the configured algorithm.
    fn level_stats(&self, x: u32) -> (u64, f64) {
        match self.opts.algorithm {
            Algorithm::Improved => (self.aggregates.count[x as usize], self.aggregates.fsum[x as usize]),
            Algorithm::Naive => scan_level(&self.xs, &self.ys, x, &self.model.weight),
        }
    }

    /// Acceptance probability of a proposal at `t_prop` for particle `i`,
    /// evaluated with the particle's stored factor value.
    pub fn acceptance_ratio(&mut self, t_prop: f64, i: usize) -> Result<f64> {
        let x = self.xs[i];
        let p = &self.model.params;
        let lam = self.model.intensity.rate_left(t_prop, x as usize);
        let (count, fsum) = self.level_stats(x);
        if !(fsum > 0.0) || count == 0 {
            return Err(SliError::Invariant(format!(
                "level {x} has count {count} and weight sum {fsum} at t = {t_prop}"
            )));
        }
        // (λ/λ̄)(f(Y)/f̄)(f_ N/D): every factor lies in [0, 1]; the last one can
        // round a few ulps above 1, which the bound f >= f_ rules out exactly.
        let r = (lam / p.lambda_bar)
            * (self.model.weight.eval(self.ys[i]) / p.f_high)
            * (p.f_low * count as f64 / fsum).min(1.0);
        if self.opts.audit {
            self.stats.ratio_evaluations += 1;
            self.stats.min_ratio = self.stats.min_ratio.min(r);
            self.stats.max_ratio = self.stats.max_ratio.max(r);
            if !(0.0..=1.0).contains(&r) {
                return Err(SliError::Invariant(format!("acceptance ratio {r} outside [0, 1]")));
            }
        }
        Ok(r)
    }

    /// Applies an accepted jump of particle `i` at `t_prop`.
    pub fn apply_jump_event(&mut self, t_prop: f64, i: usize) -> Result<()> {
        let x = self.xs[i];
        if x as usize >= self.model.m() {
            return Err(SliError::Invariant(format!(
                "particle {i} at the top level {x} was selected to jump"
            )));
        }
        let improved = self.opts.algorithm == Algorithm::Improved;
        let weight = &self.model.weight;
        if improved {
            self.aggregates.count[x as usize] -= 1;
            self.aggregates.fsum[x as usize] -= weight.eval(self.ys[i]);
        }
        let y = self.dynamics.advance(
            self.ys[i],
            x as usize,
            self.t_last[i],
            t_prop,
            &self.model.intensity,
            &mut self.brownian[i],
        );
        let y = self.dynamics.jump(y, t_prop, x as usize);
        self.xs[i] = x + 1;
        self.ys[i] = y;
        self.t_last[i] = t_prop;
        if improved {
            self.aggregates.count[x as usize + 1] += 1;
            self.aggregates.fsum[x as usize + 1] += weight.eval(y);
            if self.opts.forced_recompute {
                self.aggregates.recompute(&self.xs, &self.ys, weight);
            }
        }
        self.events.push((i as u32, t_prop));
        self.stats.accepted += 1;
        if self.opts.audit {
            self.check_conservation()?;
        }
        Ok(())
    }

    fn check_conservation(&mut self) -> Result<()> {
        self.stats.conservation_checks += 1;
        if self.opts.algorithm == Algorithm::Improved {
            let total = self.aggregates.total();
            if total != self.n() as u64 {
                return Err(SliError::Invariant(format!(
                    "aggregate counts sum to {total}, expected {}",
                    self.n()
                )));
            }
        }
        Ok(())
    }

    /// One iteration of the event loop. Returns `false` once the horizon is passed.
    pub fn step(&mut self) -> Result<bool> {
        let (tp, i) = self.propose_next_event();
        self.advance_grid_until(tp);
        if tp > self.model.horizon() {
            return Ok(false);
        }
        self.stats.proposals += 1;
        let r = self.acceptance_ratio(tp, i)?;
        let u: f64 = self.decision[i].random();
        if u < r {
            self.apply_jump_event(tp, i)?;
        }
        self.t = tp;
        Ok(true)
    }

    /// Runs the loop to the horizon and returns one record per particle.
    pub fn run(mut self) -> Result<SystemRun> {
        while self.step()? {}
        if self.opts.audit {
            if self.opts.algorithm == Algorithm::Improved {
                self.audit_aggregates();
            }
            self.check_conservation()?;
        }
        let n = self.n();
        let mut jumps: Vec<Vec<f64>> = vec![Vec::new(); n];
        for &(i, t) in &self.events {
            jumps[i as usize].push(t);
        }
        let d1 = self.grid.len();
        let paths = jumps
            .into_iter()
            .enumerate()
            .map(|(i, jump_times)| {
                let mut p = PathRecord::new(self.x_initial[i] as usize, jump_times);
                debug_assert_eq!(p.x_terminal, self.xs[i] as usize);
                if let Some(g) = &self.y_grid {
                    p.y_grid = Some((0..d1).map(|k| g[k * n + i]).collect());
                }
                p
            })
            .collect();
        Ok(SystemRun {
            paths,
            stats: self.stats,
        })
    }
}

#[cfg(feature = "parallel")]
fn advance_all<F>(ys: &mut [f64], tl: &mut [f64], xs: &[u32], rngs: &mut [SimRng], parallel: bool, step: F)
where
    F: Fn(&mut f64, &mut f64, u32, &mut SimRng) + Sync + Send,
{
    use rayon::prelude::*;
    if parallel {
        ys.par_iter_mut()
            .zip(tl.par_iter_mut())
            .zip(xs.par_iter().zip(rngs.par_iter_mut()))
            .with_min_len(1024)
            .for_each(|((y, t), (x, r))| step(y, t, *x, r));
    } else {
        for (((y, t), x), r) in ys.iter_mut().zip(tl.iter_mut()).zip(xs).zip(rngs.iter_mut()) {
            step(y, t, *x, r);
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn advance_all<F>(ys: &mut [f64], tl: &mut [f64], xs: &[u32], rngs: &mut [SimRng], _parallel: bool, step: F)
where
    F: Fn(&mut f64, &mut f64, u32, &mut SimRng),
{
    for (((y, t), x), r) in ys.iter_mut().zip(tl.iter_mut()).zip(xs).zip(rngs.iter_mut()) {
        step(y, t, *x, r);
    }
}

/// Count and weight sum at level `x`, summed in particle order.
fn scan_level(xs: &[u32], ys: &[f64], x: u32, weight: &WeightFn) -> (u64, f64) {
    let mut count = 0u64;
    let mut sum = 0.0;
    match weight {
        WeightFn::Clamp(c) => {
            for (&xi, &yi) in xs.iter().zip(ys) {
                let hit = xi == x;
                count += hit as u64;
                sum += if hit { c.eval(yi) } else { 0.0 };
            }
        }
        WeightFn::Custom { f, .. } => {
            for (&xi, &yi) in xs.iter().zip(ys) {
                if xi == x {
                    count += 1;
                    sum += f(yi);
                }
            }
        }
    }
    (count, sum)
}

/// Simulates one particle system with replication seed `seed`.
pub fn run_system(model: &SliModel, dynamics: &FactorDynamics, opts: &EngineOptions, seed: u64) -> Result<SystemRun> {
    ParticleSystem::new(model, dynamics, opts, seed)?.run()
}
