//! Time-steppers for the factor `Y` between loss jumps, and the jump map
//! applied when the loss process moves.
//!
//! Three dynamics are provided:
//!
//! * [`CirParams`]: `dY = κ(λ(t, X_{t-}) - Y) dt + σ √Y dW`. Between two loss
//!   jumps the mean-reversion target `θ = λ(t, X)` is constant (for the built-in
//!   intensities), so the step is a plain CIR transition. The default scheme is
//!   the weak second-order splitting scheme of Alfonsi (2010); the exact
//!   noncentral chi-square transition is available as a reference mode.
//! * [`LogNormalParams`]: `dY = -aY log Y dt + σY dW + γ Y_{t-} dX`, stepped by
//!   explicit Euler on `Z = log Y`.
//! * [`GenericParams`]: user-supplied `b`, `σ`, `γ` stepped by Euler-Maruyama.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};

use crate::error::{Result, SliError};
use crate::model::LocalIntensity;

/// CIR discretisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CirScheme {
    /// Alfonsi's positivity-preserving weak second-order scheme.
    #[default]
    SecondOrder,
    /// Exact sampling of the transition law.
    Exact,
}

/// Drift convention for `Z = log Y` in the log-normal model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OuDrift {
    /// `dZ = (-aZ - σ²/2) dt + σ dW`, the drift given by Itô's formula.
    #[default]
    Ito,
    /// `dZ = (-aZ + σ²/2) dt + σ dW`.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CirParams {
    pub kappa: f64,
    pub sigma: f64,
    pub y0: f64,
    pub scheme: CirScheme,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormalParams {
    pub a: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub y0: f64,
    pub drift: OuDrift,
}

/// Coefficient `(t, x, y) -> value`.
pub type Coefficient = Arc<dyn Fn(f64, usize, f64) -> f64 + Send + Sync>;

/// Generic jump diffusion. The coefficients are expected to grow at most
/// linearly in `y`; this is not checked.
#[derive(Clone)]
pub struct GenericParams {
    pub drift: Coefficient,
    pub vol: Coefficient,
    pub jump: Coefficient,
    pub y0: f64,
}

impl fmt::Debug for GenericParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GenericParams")
            .field("y0", &self.y0)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum FactorDynamics {
    Cir(CirParams),
    LogNormalJump(LogNormalParams),
    Generic(GenericParams),
}

/// Factor value together with the time it was last discretised at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorState {
    pub y: f64,
    pub t_last: f64,
}

impl FactorState {
    pub fn new(y: f64, t_last: f64) -> Self {
        Self { y, t_last }
    }
}

impl FactorDynamics {
    pub fn cir(kappa: f64, sigma: f64, y0: f64) -> Self {
        FactorDynamics::Cir(CirParams {
            kappa,
            sigma,
            y0,
            scheme: CirScheme::SecondOrder,
        })
    }

    pub fn lognormal(a: f64, sigma: f64, gamma: f64, y0: f64) -> Self {
        FactorDynamics::LogNormalJump(LogNormalParams {
            a,
            sigma,
            gamma,
            y0,
            drift: OuDrift::Ito,
        })
    }

    /// Affine coefficients `b = b0 + b1 y`, `σ = s0 + s1 y`, `γ = g0 + g1 y`.
    pub fn affine(b: [f64; 2], vol: [f64; 2], jump: [f64; 2], y0: f64) -> Self {
        FactorDynamics::Generic(GenericParams {
            drift: Arc::new(move |_, _, y| b[0] + b[1] * y),
            vol: Arc::new(move |_, _, y| vol[0] + vol[1] * y),
            jump: Arc::new(move |_, _, y| jump[0] + jump[1] * y),
            y0,
        })
    }

    pub fn y0(&self) -> f64 {
        match self {
            FactorDynamics::Cir(p) => p.y0,
            FactorDynamics::LogNormalJump(p) => p.y0,
            FactorDynamics::Generic(p) => p.y0,
        }
    }

    /// Parameter sanity checks.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SliError::InvalidParams(vec![msg]));
        match self {
            FactorDynamics::Cir(p) => {
                if !(p.kappa.is_finite() && p.kappa >= 0.0) {
                    return bad(format!("factor.kappa >= 0: got {}", p.kappa));
                }
                if !(p.sigma.is_finite() && p.sigma >= 0.0) {
                    return bad(format!("factor.sigma >= 0: got {}", p.sigma));
                }
                if !(p.y0.is_finite() && p.y0 > 0.0) {
                    return bad(format!("factor.y0 > 0: got {}", p.y0));
                }
            }
            FactorDynamics::LogNormalJump(p) => {
                if !(p.a.is_finite() && p.a >= 0.0) {
                    return bad(format!("factor.a >= 0: got {}", p.a));
                }
                if !(p.sigma.is_finite() && p.sigma >= 0.0) {
                    return bad(format!("factor.sigma >= 0: got {}", p.sigma));
                }
                if !(p.gamma.is_finite() && p.gamma >= 0.0) {
                    return bad(format!("factor.gamma >= 0: got {}", p.gamma));
                }
                if !(p.y0.is_finite() && p.y0 > 0.0) {
                    return bad(format!("factor.y0 > 0: got {}", p.y0));
                }
            }
            FactorDynamics::Generic(p) => {
                if !p.y0.is_finite() {
                    return bad(format!("factor.y0 must be finite: got {}", p.y0));
                }
            }
        }
        Ok(())
    }

    /// One step of the scheme from `t_from` to `t_to` at loss level `x`.
    ///
    /// This is the engine's hot path and performs no checks. A zero-length
    /// step returns `y` and consumes no randomness.
    #[inline]
    pub fn advance<R: Rng + ?Sized>(
        &self,
        y: f64,
        x: usize,
        t_from: f64,
        t_to: f64,
        li: &LocalIntensity,
        rng: &mut R,
    ) -> f64 {
        let h = t_to - t_from;
        if h <= 0.0 {
            return y;
        }
        match self {
            FactorDynamics::Cir(p) => {
                let theta = li.rate(t_from, x);
                cir_step(y, p.kappa * theta, p.kappa, p.sigma, h, p.scheme, rng)
            }
            FactorDynamics::LogNormalJump(p) => lognormal_step(y, p, h, rng),
            FactorDynamics::Generic(p) => {
                let xi: f64 = rng.sample(StandardNormal);
                y + (p.drift)(t_from, x, y) * h + (p.vol)(t_from, x, y) * h.sqrt() * xi
            }
        }
    }

    /// Value of `Y` right after a loss jump out of level `x_pre` at time `t`.
    #[inline]
    pub fn jump(&self, y: f64, t: f64, x_pre: usize) -> f64 {
        match self {
            FactorDynamics::Cir(_) => y,
            FactorDynamics::LogNormalJump(p) => y * (1.0 + p.gamma),
            FactorDynamics::Generic(p) => y + (p.jump)(t, x_pre, y),
        }
    }
}

/// `(1 - e^{-k t}) / k`, equal to `t` when `k = 0`.
#[inline]
fn psi(k: f64, t: f64) -> f64 {
    if k == 0.0 {
        t
    } else {
        -(-k * t).exp_m1() / k
    }
}

/// One CIR step for `dY = (a - kY) dt + σ √Y dW` over a step of length `h`.
#[inline]
pub(crate) fn cir_step<R: Rng + ?Sized>(
    y: f64,
    a: f64,
    k: f64,
    sigma: f64,
    h: f64,
    scheme: CirScheme,
    rng: &mut R,
) -> f64 {
    match scheme {
        CirScheme::SecondOrder => cir_second_order(y, a, k, sigma, h, rng),
        CirScheme::Exact => cir_exact(y, a, k, sigma, h, rng),
    }
}

fn cir_second_order<R: Rng + ?Sized>(y: f64, a: f64, k: f64, sigma: f64, h: f64, rng: &mut R) -> f64 {
    let s2 = sigma * sigma;
    let ek2 = (-0.5 * k * h).exp();
    let psi_half = psi(k, 0.5 * h);
    let shift = (a - 0.25 * s2) * psi_half;

    // Threshold below which the splitting step may leave [0, ∞).
    let k2 = if s2 > 4.0 * a {
        let c = -shift;
        ((c / ek2).sqrt() + 0.5 * sigma * (3.0 * h).sqrt()).powi(2) / ek2 + c / ek2
    } else {
        0.0
    };

    let u: f64 = rng.random();
    if y >= k2 {
        // Five-moment matching discrete normal: ±√3 w.p. 1/6 each, 0 w.p. 2/3.
        let g = if u < 1.0 / 6.0 {
            3f64.sqrt()
        } else if u < 1.0 / 3.0 {
            -(3f64.sqrt())
        } else {
            0.0
        };
        let y1 = ek2 * y + shift;
        let y2 = (y1.max(0.0).sqrt() + 0.5 * sigma * h.sqrt() * g).powi(2);
        (ek2 * y2 + shift).max(0.0)
    } else {
        // Two-point law matching the first two exact moments.
        let ekh = (-k * h).exp();
        let ps = psi(k, h);
        let u1 = y * ekh + a * ps;
        if u1 <= 0.0 {
            return 0.0;
        }
        let u2 = u1 * u1 + s2 * ps * (0.5 * a * ps + y * ekh);
        let delta = (1.0 - u1 * u1 / u2).max(0.0);
        let pi = 0.5 * (1.0 - delta.sqrt());
        if u < pi {
            u1 / (2.0 * pi)
        } else {
            u1 / (2.0 * (1.0 - pi))
        }
    }
}

fn cir_exact<R: Rng + ?Sized>(y: f64, a: f64, k: f64, sigma: f64, h: f64, rng: &mut R) -> f64 {
    let ekh = (-k * h).exp();
    if sigma == 0.0 {
        return y * ekh + a * psi(k, h);
    }
    let c = 0.25 * sigma * sigma * psi(k, h);
    let dof = 4.0 * a / (sigma * sigma);
    let noncentrality = y * ekh / c;
    let n = if noncentrality > 0.0 {
        Poisson::new(0.5 * noncentrality)
            .expect("finite positive Poisson mean")
            .sample(rng)
    } else {
        0.0
    };
    let shape = 0.5 * dof + n;
    if shape <= 0.0 {
        return 0.0;
    }
    c * Gamma::new(shape, 2.0).expect("positive gamma shape").sample(rng)
}

#[inline]
fn lognormal_step<R: Rng + ?Sized>(y: f64, p: &LogNormalParams, h: f64, rng: &mut R) -> f64 {
    let z = y.ln();
    let half_var = 0.5 * p.sigma * p.sigma;
    let drift = match p.drift {
        OuDrift::Ito => -p.a * z - half_var,
        OuDrift::Paper => -p.a * z + half_var,
    };
    let xi: f64 = rng.sample(StandardNormal);
    (z + drift * h + p.sigma * h.sqrt() * xi).exp()
}

fn substeps(t_from: f64, t_to: f64, max_step: f64) -> Result<usize> {
    if !(t_from <= t_to) {
        return Err(SliError::Domain(format!("t_from = {t_from} after t_to = {t_to}")));
    }
    if !(max_step > 0.0) {
        return Err(SliError::Domain(format!("step size must be positive, got {max_step}")));
    }
    Ok(((t_to - t_from) / max_step - 1e-9).ceil().max(0.0) as usize)
}

/// Advances a CIR factor with constant target `theta` from `state.t_last` to
/// `t_to`, using equal sub-steps no longer than `max_step`.
pub fn step_cir<R: Rng + ?Sized>(
    state: FactorState,
    theta: f64,
    t_to: f64,
    params: &CirParams,
    max_step: f64,
    rng: &mut R,
) -> Result<FactorState> {
    if !(state.y > 0.0) {
        return Err(SliError::Domain(format!(
            "CIR factor must be positive, got {}",
            state.y
        )));
    }
    let n = substeps(state.t_last, t_to, max_step)?;
    let mut y = state.y;
    if n > 0 {
        let h = (t_to - state.t_last) / n as f64;
        for _ in 0..n {
            y = cir_step(
                y,
                params.kappa * theta,
                params.kappa,
                params.sigma,
                h,
                params.scheme,
                rng,
            );
        }
    }
    Ok(FactorState::new(y, t_to))
}

/// Advances a log-normal factor from `state.t_last` to `t_to` by Euler steps
/// on `log Y` no longer than `max_step`.
pub fn step_lognormal<R: Rng + ?Sized>(
    state: FactorState,
    t_to: f64,
    params: &LogNormalParams,
    max_step: f64,
    rng: &mut R,
) -> Result<FactorState> {
    if !(state.y > 0.0) {
        return Err(SliError::Domain(format!(
            "log-normal factor must be positive, got {}",
            state.y
        )));
    }
    let n = substeps(state.t_last, t_to, max_step)?;
    let mut y = state.y;
    if n > 0 {
        let h = (t_to - state.t_last) / n as f64;
        for _ in 0..n {
            y = lognormal_step(y, params, h, rng);
        }
    }
    Ok(FactorState::new(y, t_to))
}

/// Applies the jump map of `dynamics` at a loss jump out of level `x_pre`.
pub fn apply_jump(state: FactorState, t: f64, x_pre: usize, dynamics: &FactorDynamics) -> FactorState {
    FactorState::new(dynamics.jump(state.y, t, x_pre), t)
}

/// Conditional mean `θ + (y - θ) e^{-κh}` of the CIR transition.
pub fn cir_conditional_mean(y: f64, kappa: f64, theta: f64, h: f64) -> f64 {
    theta + (y - theta) * (-kappa * h).exp()
}
