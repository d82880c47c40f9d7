//! Discrete-factor case: `Y` is a continuous-time Markov chain on
//! `{0..J-1}` whose generator `μ^x` depends on the loss level.
//!
//! The joint law `P[i][j] = P(X_t = i, Y_t = j)` solves the forward equation
//!
//! ```text
//! P' = Ψ(t, P_+),
//! Ψ(t, x)^i_j = Σ_k μ^i_{kj} x^i_k
//!             + 1{i >= 1}    λ(t, i-1) f_j x^{i-1}_j / φ(x, i-1)
//!             - 1{i <= M-1}  λ(t, i)   f_j x^i_j     / φ(x, i)
//! ```
//!
//! with `φ(x, i) = Σ_l f_l x^i_l / Σ_l x^i_l`. A level with (numerically) no
//! mass contributes no jump flux, which is the continuous extension of `Ψ`.
//! [`solve_fp`] integrates this with fixed-step RK4; [`simulate_joint_ctmc`]
//! samples the Markov chain whose rates use the `φ` of that solution.

use rand::Rng;

use crate::error::{Result, SliError};
use crate::exec::map_indices;
use crate::model::SliModel;
use crate::rng::{exponential, particle_stream, StreamRole};

/// Column mass below which `φ` falls back to `f_low` and the jump terms vanish.
pub const EPS_MASS: f64 = 1e-14;

/// One `J × J` generator per loss level, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorFamily {
    j: usize,
    mats: Vec<Vec<f64>>,
}

impl GeneratorFamily {
    pub fn new(mats: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let j = mats.first().map_or(0, |m| m.len());
        if j == 0 {
            return Err(SliError::InvalidParams(vec!["generator family is empty".into()]));
        }
        let mut violations = Vec::new();
        let mut flat = Vec::with_capacity(mats.len());
        for (k, m) in mats.iter().enumerate() {
            if m.len() != j || m.iter().any(|r| r.len() != j) {
                violations.push(format!("generator {k} is not {j}x{j}"));
                continue;
            }
            for (a, row) in m.iter().enumerate() {
                for (b, &v) in row.iter().enumerate() {
                    if !v.is_finite() {
                        violations.push(format!("generator {k}: entry ({a},{b}) is not finite"));
                    } else if a != b && v < 0.0 {
                        violations.push(format!("generator {k}: off-diagonal ({a},{b}) = {v} < 0"));
                    } else if a == b && v > 0.0 {
                        violations.push(format!("generator {k}: diagonal ({a},{a}) = {v} > 0"));
                    }
                }
                let s: f64 = row.iter().sum();
                if s.abs() > 1e-12 {
                    violations.push(format!("generator {k}: row {a} sums to {s}, not 0"));
                }
            }
            flat.push(m.iter().flatten().copied().collect());
        }
        if !violations.is_empty() {
            return Err(SliError::InvalidParams(violations));
        }
        Ok(Self { j, mats: flat })
    }

    /// The same generator at every one of `levels` loss levels.
    pub fn uniform(mat: Vec<Vec<f64>>, levels: usize) -> Result<Self> {
        Self::new(vec![mat; levels])
    }

    pub fn states(&self) -> usize {
        self.j
    }

    pub fn levels(&self) -> usize {
        self.mats.len()
    }

    #[inline]
    pub fn rate(&self, level: usize, from: usize, to: usize) -> f64 {
        self.mats[level][from * self.j + to]
    }

    /// `sup_{k, i} |μ^k_{ii}|`.
    pub fn sup_diag(&self) -> f64 {
        self.mats
            .iter()
            .flat_map(|m| (0..self.j).map(move |i| m[i * self.j + i].abs()))
            .fold(0.0, f64::max)
    }
}

/// A validated discrete-factor model.
#[derive(Debug, Clone)]
pub struct DiscreteModel {
    pub model: SliModel,
    pub gen: GeneratorFamily,
    /// `f` evaluated at each factor state.
    pub f_vals: Vec<f64>,
}

impl DiscreteModel {
    pub fn new(model: SliModel, gen: GeneratorFamily, f_vals: Vec<f64>) -> Result<Self> {
        let mut v = Vec::new();
        if gen.levels() != model.m() + 1 {
            v.push(format!(
                "generator family has {} levels, expected {}",
                gen.levels(),
                model.m() + 1
            ));
        }
        if f_vals.len() != gen.states() {
            v.push(format!(
                "f_vals has {} entries for {} factor states",
                f_vals.len(),
                gen.states()
            ));
        }
        let (lo, hi) = (model.params.f_low, model.params.f_high);
        for (j, &f) in f_vals.iter().enumerate() {
            if !(lo..=hi).contains(&f) {
                v.push(format!("f_vals[{j}] = {f} outside [{lo}, {hi}]"));
            }
        }
        if !v.is_empty() {
            return Err(SliError::InvalidParams(v));
        }
        Ok(Self { model, gen, f_vals })
    }

    pub fn m(&self) -> usize {
        self.model.m()
    }

    pub fn states(&self) -> usize {
        self.gen.states()
    }

    /// `K = 2 sup|μ_ii| + 2 λ̄ (1 + 2 f̄ / f_)`.
    pub fn lipschitz_constant(&self) -> f64 {
        let p = &self.model.params;
        2.0 * self.gen.sup_diag() + 2.0 * p.lambda_bar * (1.0 + 2.0 * p.f_high / p.f_low)
    }

    /// Dominating total event rate of the joint chain.
    pub fn ctmc_bound(&self) -> f64 {
        self.model.params.thinning_rate() + self.gen.sup_diag()
    }

    /// Dirac mass at `(x0, y0)`.
    pub fn dirac(&self, x0: usize, y0: usize) -> Result<FpState> {
        if x0 > self.m() || y0 >= self.states() {
            return Err(SliError::Domain(format!("initial state ({x0}, {y0}) out of range")));
        }
        let mut s = FpState::zeros(self.m() + 1, self.states());
        s.p[x0 * self.states() + y0] = 1.0;
        Ok(s)
    }
}

/// Joint pmf over loss levels × factor states at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FpState {
    pub levels: usize,
    pub states: usize,
    /// Row-major: `p[i * states + j]`.
    pub p: Vec<f64>,
    pub t: f64,
}

impl FpState {
    pub fn zeros(levels: usize, states: usize) -> Self {
        Self {
            levels,
            states,
            p: vec![0.0; levels * states],
            t: 0.0,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.states + j]
    }

    pub fn mass(&self) -> f64 {
        self.p.iter().sum()
    }

    pub fn min_entry(&self) -> f64 {
        self.p.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `P(X_t = i)`.
    pub fn marginal_x(&self) -> Vec<f64> {
        self.p.chunks(self.states).map(|r| r.iter().sum()).collect()
    }

    /// `P(Y_t = j)`.
    pub fn marginal_y(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.states];
        for row in self.p.chunks(self.states) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }
}

/// `φ(P_+, i)`, or `f_low` when level `i` carries no mass.
pub fn phi(p: &[f64], states: usize, i: usize, f_vals: &[f64], f_low: f64) -> f64 {
    let row = &p[i * states..(i + 1) * states];
    let (mut mass, mut fm) = (0.0, 0.0);
    for (&v, &f) in row.iter().zip(f_vals) {
        let v = v.max(0.0);
        mass += v;
        fm += f * v;
    }
    if mass <= EPS_MASS {
        f_low
    } else {
        fm / mass
    }
}

/// Writes `Ψ(t, p_+)` into `out`.
pub fn psi_plus(dm: &DiscreteModel, t: f64, p: &[f64], out: &mut [f64]) {
    let js = dm.states();
    let levels = dm.m() + 1;
    debug_assert_eq!(p.len(), levels * js);
    out.fill(0.0);
    for i in 0..levels {
        let row = &p[i * js..(i + 1) * js];
        let o = &mut out[i * js..(i + 1) * js];
        for (k, &xk) in row.iter().enumerate() {
            let xk = xk.max(0.0);
            if xk == 0.0 {
                continue;
            }
            for (j, oj) in o.iter_mut().enumerate() {
                *oj += dm.gen.rate(i, k, j) * xk;
            }
        }
    }
    let f_low = dm.model.params.f_low;
    for i in 0..levels - 1 {
        let mass: f64 = p[i * js..(i + 1) * js].iter().map(|v| v.max(0.0)).sum();
        if mass <= EPS_MASS {
            continue;
        }
        let rate = dm.model.intensity.rate(t, i) / phi(p, js, i, &dm.f_vals, f_low);
        if rate == 0.0 {
            continue;
        }
        for j in 0..js {
            let flow = rate * dm.f_vals[j] * p[i * js + j].max(0.0);
            out[i * js + j] -= flow;
            out[(i + 1) * js + j] += flow;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpOptions {
    pub dt: f64,
    /// Smallest entry tolerated before the solve is declared failed.
    pub tol_pos: f64,
    /// Largest tolerated `|mass - 1|`.
    pub tol_mass: f64,
    /// Keep every `record_every`-th state (the final state is always kept).
    pub record_every: usize,
}

impl FpOptions {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            tol_pos: 1e-12,
            tol_mass: 1e-8,
            record_every: 1,
        }
    }
}

/// Output of [`solve_fp`].
#[derive(Debug, Clone, PartialEq)]
pub struct FpTrajectory {
    pub states: Vec<FpState>,
    /// Worst values seen over all steps, not only the recorded ones.
    pub min_entry: f64,
    pub max_mass_error: f64,
}

impl FpTrajectory {
    pub fn last(&self) -> &FpState {
        self.states.last().expect("trajectory holds at least the initial state")
    }
}

/// Integrates the forward equation from `p0` to `t_end` with RK4.
pub fn solve_fp(dm: &DiscreteModel, p0: &FpState, t_end: f64, opts: &FpOptions) -> Result<FpTrajectory> {
    let n = dm.m() + 1;
    let js = dm.states();
    if p0.levels != n || p0.states != js {
        return Err(SliError::Domain(format!(
            "initial state is {}x{}, model needs {n}x{js}",
            p0.levels, p0.states
        )));
    }
    if !(opts.dt > 0.0) || !(t_end >= p0.t) {
        return Err(SliError::Domain(format!(
            "bad time stepping: dt = {}, t_end = {t_end}",
            opts.dt
        )));
    }
    if p0.min_entry() < 0.0 || (p0.mass() - 1.0).abs() > opts.tol_mass {
        return Err(SliError::Domain("initial state is not a probability vector".into()));
    }
    let steps = ((t_end - p0.t) / opts.dt).round().max(1.0) as usize;
    let h = (t_end - p0.t) / steps as f64;
    let every = opts.record_every.max(1);

    let len = n * js;
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (
        vec![0.0; len],
        vec![0.0; len],
        vec![0.0; len],
        vec![0.0; len],
        vec![0.0; len],
    );
    let mut p = p0.p.clone();
    let mut states = vec![p0.clone()];
    let mut min_entry = p0.min_entry();
    let mut max_mass_error = (p0.mass() - 1.0).abs();

    for s in 0..steps {
        let t = p0.t + s as f64 * h;
        psi_plus(dm, t, &p, &mut k1);
        for q in 0..len {
            tmp[q] = p[q] + 0.5 * h * k1[q];
        }
        psi_plus(dm, t + 0.5 * h, &tmp, &mut k2);
        for q in 0..len {
            tmp[q] = p[q] + 0.5 * h * k2[q];
        }
        psi_plus(dm, t + 0.5 * h, &tmp, &mut k3);
        for q in 0..len {
            tmp[q] = p[q] + h * k3[q];
        }
        psi_plus(dm, t + h, &tmp, &mut k4);
        for q in 0..len {
            p[q] += h / 6.0 * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q]);
        }

        let t_new = if s + 1 == steps {
            t_end
        } else {
            p0.t + (s + 1) as f64 * h
        };
        let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
        let mass_err = (p.iter().sum::<f64>() - 1.0).abs();
        min_entry = min_entry.min(lo);
        max_mass_error = max_mass_error.max(mass_err);
        if lo < -opts.tol_pos {
            return Err(SliError::Numerical {
                time: t_new,
                reason: format!("entry {lo} below -{}", opts.tol_pos),
            });
        }
        if mass_err > opts.tol_mass {
            return Err(SliError::Numerical {
                time: t_new,
                reason: format!("mass off by {mass_err}"),
            });
        }
        if (s + 1) % every == 0 || s + 1 == steps {
            states.push(FpState {
                levels: n,
                states: js,
                p: p.clone(),
                t: t_new,
            });
        }
    }
    Ok(FpTrajectory {
        states,
        min_entry,
        max_mass_error,
    })
}

/// `φ(t, i)` on the recorded times of a trajectory, linearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiTable {
    times: Vec<f64>,
    /// `values[k * levels + i]`.
    values: Vec<f64>,
    levels: usize,
}

impl PhiTable {
    pub fn from_trajectory(dm: &DiscreteModel, traj: &FpTrajectory) -> Self {
        let levels = dm.m() + 1;
        let f_low = dm.model.params.f_low;
        let times = traj.states.iter().map(|s| s.t).collect();
        let values = traj
            .states
            .iter()
            .flat_map(|s| (0..levels).map(move |i| phi(&s.p, s.states, i, &dm.f_vals, f_low)))
            .collect();
        Self { times, values, levels }
    }

    pub fn eval(&self, t: f64, i: usize) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            return self.values[i];
        }
        if k >= self.times.len() {
            return self.values[(self.times.len() - 1) * self.levels + i];
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = (t - t0) / (t1 - t0);
        let (a, b) = (self.values[(k - 1) * self.levels + i], self.values[k * self.levels + i]);
        a + w * (b - a)
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }
}

/// One path of the joint chain.
#[derive(Debug, Clone, PartialEq)]
pub struct CtmcPath {
    pub jump_times: Vec<f64>,
    pub x_terminal: usize,
    pub y_terminal: usize,
}

/// Simulates `(X, Y)` on `[0, t_end]` by thinning against
/// `λ̄ f̄ / f_ + sup|μ_ii|`. At a proposal the loss jumps with rate
/// `f_y λ(t-, x) / φ(t-, x)`, otherwise the factor moves with rates `μ^x_{y·}`.
pub fn simulate_joint_ctmc<R: Rng + ?Sized>(
    dm: &DiscreteModel,
    x0: usize,
    y0: usize,
    t_end: f64,
    phi_table: &PhiTable,
    rng: &mut R,
) -> Result<CtmcPath> {
    if x0 > dm.m() || y0 >= dm.states() {
        return Err(SliError::Domain(format!("initial state ({x0}, {y0}) out of range")));
    }
    if phi_table.t_end() < t_end {
        return Err(SliError::Domain(format!(
            "φ table ends at {} before {t_end}",
            phi_table.t_end()
        )));
    }
    let bound = dm.ctmc_bound();
    let m = dm.m();
    let (mut x, mut y, mut t) = (x0, y0, 0.0);
    let mut jumps = Vec::new();
    loop {
        t += exponential(rng, bound);
        if t > t_end {
            break;
        }
        let rate_x = if x < m {
            dm.f_vals[y] * dm.model.intensity.rate_left(t, x) / phi_table.eval(t, x)
        } else {
            0.0
        };
        let u = rng.random::<f64>() * bound;
        if u < rate_x {
            x += 1;
            jumps.push(t);
            continue;
        }
        let mut acc = rate_x;
        for k in 0..dm.states() {
            if k == y {
                continue;
            }
            acc += dm.gen.rate(x, y, k);
            if u < acc {
                y = k;
                break;
            }
        }
    }
    Ok(CtmcPath {
        jump_times: jumps,
        x_terminal: x,
        y_terminal: y,
    })
}

/// `n` paths; path `p` uses substream `p` of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_joint_ctmc_paths(
    dm: &DiscreteModel,
    x0: usize,
    y0: usize,
    t_end: f64,
    phi_table: &PhiTable,
    n: usize,
    seed: u64,
    parallel: bool,
) -> Result<Vec<CtmcPath>> {
    map_indices(n, parallel, |p| {
        simulate_joint_ctmc(
            dm,
            x0,
            y0,
            t_end,
            phi_table,
            &mut particle_stream(seed, p, StreamRole::System),
        )
    })
    .into_iter()
    .collect()
}

/// Empirical joint pmf of `(X_T, Y_T)` in the layout of [`FpState`].
pub fn empirical_joint(paths: &[CtmcPath], levels: usize, states: usize) -> Vec<f64> {
    let mut out = vec![0.0; levels * states];
    for p in paths {
        out[p.x_terminal * states + p.y_terminal] += 1.0;
    }
    let n = paths.len().max(1) as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::li::binomial_pmf;
    use crate::model::{LocalIntensity, ModelParams};
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;

    fn two_level_instance() -> DiscreteModel {
        let params = ModelParams::new(2, 2.0, 1.0);
        let li = LocalIntensity::linear_decay(2.0, 2);
        let gen = GeneratorFamily::new(vec![
            vec![vec![-1.0, 1.0], vec![0.5, -0.5]],
            vec![vec![-2.0, 2.0], vec![1.0, -1.0]],
            vec![vec![-0.3, 0.3], vec![0.7, -0.7]],
        ])
        .unwrap();
        DiscreteModel::new(SliModel::new(params, li).unwrap(), gen, vec![0.5, 2.0]).unwrap()
    }

    #[test]
    fn generator_validation() {
        assert!(GeneratorFamily::new(vec![vec![vec![-1.0, 1.0], vec![0.5, -0.4]]]).is_err());
        assert!(GeneratorFamily::new(vec![vec![vec![1.0, -1.0], vec![0.5, -0.5]]]).is_err());
        assert!(GeneratorFamily::new(vec![vec![vec![-1.0, 1.0]]]).is_err());
        let g = GeneratorFamily::uniform(vec![vec![-1.0, 1.0], vec![3.0, -3.0]], 2).unwrap();
        assert_eq!(g.sup_diag(), 3.0);
    }

    #[test]
    fn f_vals_must_respect_clamp() {
        let model = SliModel::linear_decay(1, 1.0, 1.0).unwrap();
        let gen = GeneratorFamily::uniform(vec![vec![0.0]], 2).unwrap();
        assert!(DiscreteModel::new(model, gen, vec![5.0]).is_err());
    }

    #[test]
    fn phi_examples() {
        let p = vec![0.0, 0.7, 0.3, 0.0, 0.0, 0.0];
        let f = [0.5, 2.0];
        assert_eq!(phi(&p, 2, 0, &f, 0.25), 2.0);
        assert_eq!(phi(&p, 2, 1, &f, 0.25), 0.5);
        assert_eq!(phi(&p, 2, 2, &f, 0.25), 0.25);
        let c = [1.5, 1.5];
        let q = vec![0.2, 0.3, 0.1, 0.4];
        assert!((phi(&q, 2, 0, &c, 0.1) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn psi_vanishes_without_dynamics() {
        let params = ModelParams::new(2, 1.0, 1.0);
        let model = SliModel::new(params, LocalIntensity::zero(2)).unwrap();
        let gen = GeneratorFamily::uniform(vec![vec![0.0, 0.0], vec![0.0, 0.0]], 3).unwrap();
        let dm = DiscreteModel::new(model, gen, vec![0.5, 2.0]).unwrap();
        let p = vec![0.1, 0.2, 0.3, 0.1, 0.2, 0.1];
        let mut out = vec![1.0; 6];
        psi_plus(&dm, 0.3, &p, &mut out);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn psi_single_factor_reduction() {
        let params = ModelParams::new(1, 3.0, 1.0);
        let li = LocalIntensity::per_level(vec![1.7, 0.0]);
        let model = SliModel::new(params, li).unwrap();
        let gen = GeneratorFamily::uniform(vec![vec![0.0]], 2).unwrap();
        let dm = DiscreteModel::new(model, gen, vec![2.0]).unwrap();
        let p = vec![0.6, 0.4];
        let mut out = vec![0.0; 2];
        psi_plus(&dm, 0.0, &p, &mut out);
        assert!((out[0] + 1.7 * 0.6).abs() < 1e-15);
        assert!((out[1] - 1.7 * 0.6).abs() < 1e-15);
    }

    /// `P(Y_t = 0)` for a two-state chain started in 0.
    fn two_state_p0(a: f64, b: f64, t: f64) -> f64 {
        b / (a + b) + a / (a + b) * (-(a + b) * t).exp()
    }

    #[test]
    fn pure_factor_chain_matches_closed_form_at_fourth_order() {
        let (a, b) = (1.3, 0.4);
        let params = ModelParams::new(1, 1.0, 1.0);
        let model = SliModel::new(params, LocalIntensity::zero(1)).unwrap();
        let gen = GeneratorFamily::uniform(vec![vec![-a, a], vec![b, -b]], 2).unwrap();
        let dm = DiscreteModel::new(model, gen, vec![1.0, 2.0]).unwrap();
        let p0 = dm.dirac(0, 0).unwrap();
        let err = |dt: f64| {
            let traj = solve_fp(&dm, &p0, 2.0, &FpOptions::new(dt)).unwrap();
            traj.states
                .iter()
                .map(|s| (s.get(0, 0) - two_state_p0(a, b, s.t)).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(0.2), err(0.1));
        let order = (e1 / e2).log2();
        assert!((order - 4.0).abs() < 0.3, "observed order {order}");
        assert!(err(0.002) < 1e-12);
    }

    #[test]
    fn pure_poisson_reduction() {
        let lam0 = 1.7;
        let params = ModelParams::new(1, 2.0, 1.0);
        let model = SliModel::new(params, LocalIntensity::per_level(vec![lam0, 0.0])).unwrap();
        let gen = GeneratorFamily::uniform(vec![vec![0.0]], 2).unwrap();
        let dm = DiscreteModel::new(model, gen, vec![1.0]).unwrap();
        let p0 = dm.dirac(0, 0).unwrap();
        let err = |dt: f64| {
            let traj = solve_fp(&dm, &p0, 1.0, &FpOptions::new(dt)).unwrap();
            traj.states
                .iter()
                .map(|s| (s.get(0, 0) - (-lam0 * s.t).exp()).abs())
                .fold(0.0, f64::max)
        };
        let order = (err(0.1) / err(0.05)).log2();
        assert!((order - 4.0).abs() < 0.3, "observed order {order}");
        assert!(err(0.001) < 1e-13);
    }

    #[test]
    fn constant_weight_reduces_to_binomial() {
        // f_j constant: φ cancels and X is the linear-decay LI chain.
        let params = ModelParams::new(2, 2.0, 1.5);
        let li = LocalIntensity::linear_decay(2.0, 2);
        let model = SliModel::new(params, li.clone()).unwrap();
        let gen = GeneratorFamily::uniform(vec![vec![-1.0, 1.0], vec![2.0, -2.0]], 3).unwrap();
        let dm = DiscreteModel::new(model, gen, vec![1.2, 1.2]).unwrap();
        let traj = solve_fp(&dm, &dm.dirac(0, 1).unwrap(), 1.5, &FpOptions::new(1e-3)).unwrap();
        let expect = binomial_pmf(&li, 1.5).unwrap();
        for (a, b) in traj.last().marginal_x().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn cross_validation_instance_keeps_invariants() {
        let dm = two_level_instance();
        let traj = solve_fp(&dm, &dm.dirac(0, 0).unwrap(), 1.0, &FpOptions::new(1e-3)).unwrap();
        assert!(traj.min_entry >= -1e-12);
        assert!(traj.max_mass_error <= 1e-8);
        assert_eq!(traj.states.len(), 1001);
    }

    #[test]
    fn solver_reports_failure_time() {
        let dm = two_level_instance();
        let mut opts = FpOptions::new(0.25);
        opts.tol_pos = 0.0;
        opts.tol_mass = 1e-30;
        match solve_fp(&dm, &dm.dirac(0, 0).unwrap(), 1.0, &opts) {
            Err(SliError::Numerical { time, .. }) => assert!(time > 0.0 && time <= 1.0),
            other => panic!("expected a numerical failure, got {other:?}"),
        }
    }

    #[test]
    fn ctmc_matches_forward_equation() {
        let dm = two_level_instance();
        let traj = solve_fp(&dm, &dm.dirac(0, 0).unwrap(), 1.0, &FpOptions::new(1e-3)).unwrap();
        let table = PhiTable::from_trajectory(&dm, &traj);
        let n = 40_000;
        let paths = simulate_joint_ctmc_paths(&dm, 0, 0, 1.0, &table, n, 21, true).unwrap();
        let emp = empirical_joint(&paths, 3, 2);
        for (e, p) in emp.iter().zip(&traj.last().p) {
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((e - p).abs() <= 3.0 * se + 1e-12, "{e} vs {p} (se {se})");
        }
    }

    #[test]
    fn phi_table_interpolates() {
        let dm = two_level_instance();
        let traj = solve_fp(&dm, &dm.dirac(0, 0).unwrap(), 1.0, &FpOptions::new(0.1)).unwrap();
        let table = PhiTable::from_trajectory(&dm, &traj);
        let s = &traj.states[3];
        let direct = phi(&s.p, 2, 0, &dm.f_vals, dm.model.params.f_low);
        assert!((table.eval(s.t, 0) - direct).abs() < 1e-15);
        let mid = table.eval(0.35, 1);
        let (a, b) = (table.eval(0.3, 1), table.eval(0.4, 1));
        assert!((mid - 0.5 * (a + b)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn psi_conserves_mass(
            raw in prop::collection::vec(-0.05f64..1.0, 6),
            t in 0.0f64..1.0,
        ) {
            let dm = two_level_instance();
            let mut out = vec![0.0; 6];
            psi_plus(&dm, t, &raw, &mut out);
            let s: f64 = out.iter().sum();
            prop_assert!(s.abs() < 1e-12, "flux sum {}", s);
        }

        #[test]
        fn psi_is_lipschitz(
            x in prop::collection::vec(-0.05f64..1.0, 6),
            y in prop::collection::vec(-0.05f64..1.0, 6),
            t in 0.0f64..1.0,
        ) {
            let dm = two_level_instance();
            let (mut fx, mut fy) = (vec![0.0; 6], vec![0.0; 6]);
            psi_plus(&dm, t, &x, &mut fx);
            psi_plus(&dm, t, &y, &mut fy);
            let lhs: f64 = fx.iter().zip(&fy).map(|(a, b)| (a - b).abs()).sum();
            let dist: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum();
            prop_assert!(lhs <= dm.lipschitz_constant() * dist + 1e-12);
        }
    }

    #[test]
    fn ctmc_without_loss_jumps_samples_the_factor_chain() {
        let (a, b) = (1.3, 0.4);
        let params = ModelParams::new(1, 1.0, 1.0);
        let model = SliModel::new(params, LocalIntensity::zero(1)).unwrap();
        let gen = GeneratorFamily::uniform(vec![vec![-a, a], vec![b, -b]], 2).unwrap();
        let dm = DiscreteModel::new(model, gen, vec![1.0, 2.0]).unwrap();
        let traj = solve_fp(&dm, &dm.dirac(0, 0).unwrap(), 1.0, &FpOptions::new(0.01)).unwrap();
        let table = PhiTable::from_trajectory(&dm, &traj);
        let mut rng = rng_from_seed(5);
        let n = 50_000;
        let mut zeros = 0;
        for _ in 0..n {
            let p = simulate_joint_ctmc(&dm, 0, 0, 1.0, &table, &mut rng).unwrap();
            assert!(p.jump_times.is_empty());
            zeros += (p.y_terminal == 0) as usize;
        }
        let q = two_state_p0(a, b, 1.0);
        let se = (q * (1.0 - q) / n as f64).sqrt();
        assert!((zeros as f64 / n as f64 - q).abs() < 3.0 * se);
    }
}
