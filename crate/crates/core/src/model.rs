//! Model parameters, the local intensity `λ(t, x)` and the bounded weight `f`.
//!
//! Every engine in the crate takes an [`SliModel`], which can only be built
//! from inputs that pass [`validate_params`]. The engines rely on three
//! standing assumptions checked there:
//!
//! * `0 < f_low <= f(y) <= f_high < ∞` for every real `y`,
//! * `λ(t, M) = 0`, so no path ever leaves `{0, …, M}`,
//! * `λ(t, x) <= lambda_bar`, which makes `lambda_bar * f_high / f_low` a
//!   valid dominating rate for thinning.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SliError};

/// Scalar parameters shared by all engines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Number of defaultable entities `M`.
    pub m: usize,
    /// Upper bound `λ̄` of the local intensity.
    pub lambda_bar: f64,
    /// Lower clamp of the weight function.
    pub f_low: f64,
    /// Upper clamp of the weight function.
    pub f_high: f64,
    /// Simulation horizon `T`.
    pub horizon: f64,
}

impl ModelParams {
    pub const DEFAULT_F_LOW: f64 = 1.0 / 3.0;
    pub const DEFAULT_F_HIGH: f64 = 3.0;

    pub fn new(m: usize, lambda_bar: f64, horizon: f64) -> Self {
        Self {
            m,
            lambda_bar,
            f_low: Self::DEFAULT_F_LOW,
            f_high: Self::DEFAULT_F_HIGH,
            horizon,
        }
    }

    pub fn with_clamp(mut self, f_low: f64, f_high: f64) -> Self {
        self.f_low = f_low;
        self.f_high = f_high;
        self
    }

    /// Dominating jump rate of a single particle, `λ̄ f̄ / f_`.
    pub fn thinning_rate(&self) -> f64 {
        self.lambda_bar * self.f_high / self.f_low
    }

    /// Prefactor `f_ / (λ̄ f̄)` of the acceptance ratio.
    pub fn ratio_scale(&self) -> f64 {
        self.f_low / (self.lambda_bar * self.f_high)
    }
}

/// Piecewise-constant intensity table: `values[x][k]` is `λ(t, x)` on
/// `[breakpoints[k], breakpoints[k + 1])`, the last interval being unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityTable {
    pub breakpoints: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl IntensityTable {
    /// Index of the interval containing `t` (right-continuous convention).
    fn interval(&self, t: f64) -> usize {
        // number of breakpoints <= t, minus one
        self.breakpoints.partition_point(|&b| b <= t).saturating_sub(1)
    }

    /// Index of the interval whose value is the left limit at `t`.
    fn interval_left(&self, t: f64) -> usize {
        self.breakpoints.partition_point(|&b| b < t).saturating_sub(1)
    }
}

/// The local intensity `λ(t, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LocalIntensity {
    /// `λ(t, x) = λ̄ (1 - x / M)`: M independent names with default rate `λ̄ / M`.
    LinearDecay { lambda_bar: f64, m: usize },
    /// User-supplied piecewise-constant table.
    Table(IntensityTable),
}

impl LocalIntensity {
    pub fn linear_decay(lambda_bar: f64, m: usize) -> Self {
        LocalIntensity::LinearDecay { lambda_bar, m }
    }

    /// Time-homogeneous table with one rate per loss level.
    pub fn per_level(rates: Vec<f64>) -> Self {
        LocalIntensity::Table(IntensityTable {
            breakpoints: vec![0.0],
            values: rates.into_iter().map(|r| vec![r]).collect(),
        })
    }

    /// `λ ≡ 0` on `{0, …, m}`.
    pub fn zero(m: usize) -> Self {
        Self::per_level(vec![0.0; m + 1])
    }

    pub fn table(breakpoints: Vec<f64>, values: Vec<Vec<f64>>) -> Self {
        LocalIntensity::Table(IntensityTable { breakpoints, values })
    }

    /// Number of loss levels the intensity is defined on (`M + 1`).
    pub fn levels(&self) -> usize {
        match self {
            LocalIntensity::LinearDecay { m, .. } => m + 1,
            LocalIntensity::Table(tab) => tab.values.len(),
        }
    }

    /// `λ(t, x)` without range checks. `x` must be a valid level.
    #[inline]
    pub fn rate(&self, t: f64, x: usize) -> f64 {
        match self {
            LocalIntensity::LinearDecay { lambda_bar, m } => {
                if x >= *m {
                    0.0
                } else {
                    lambda_bar * (1.0 - x as f64 / *m as f64)
                }
            }
            LocalIntensity::Table(tab) => tab.values[x][tab.interval(t)],
        }
    }

    /// Left limit `λ(t-, x)` without range checks.
    #[inline]
    pub fn rate_left(&self, t: f64, x: usize) -> f64 {
        match self {
            LocalIntensity::LinearDecay { .. } => self.rate(t, x),
            LocalIntensity::Table(tab) => tab.values[x][tab.interval_left(t)],
        }
    }

    /// Largest value the intensity takes anywhere.
    pub fn sup(&self) -> f64 {
        match self {
            LocalIntensity::LinearDecay { lambda_bar, m } => {
                if *m == 0 {
                    0.0
                } else {
                    *lambda_bar
                }
            }
            LocalIntensity::Table(tab) => tab.values.iter().flatten().copied().fold(0.0, f64::max),
        }
    }
}

/// Checked evaluation of `λ(t, x)` for `t ∈ [0, horizon]`, `x ∈ {0, …, M}`.
pub fn eval_lambda(li: &LocalIntensity, horizon: f64, t: f64, x: usize) -> Result<f64> {
    let m = li.levels() - 1;
    if !(0.0..=horizon).contains(&t) {
        return Err(SliError::Domain(format!("t = {t} outside [0, {horizon}]")));
    }
    if x > m {
        return Err(SliError::Domain(format!("loss level {x} outside {{0..{m}}}")));
    }
    let v = li.rate(t, x);
    if x == m && v != 0.0 {
        return Err(SliError::Domain(format!("λ({t}, M) = {v}, must vanish")));
    }
    Ok(v)
}

/// The clamp `f(y) = min(max(y, f_low), f_high)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClampF {
    pub f_low: f64,
    pub f_high: f64,
}

impl ClampF {
    pub fn new(f_low: f64, f_high: f64) -> Self {
        Self { f_low, f_high }
    }

    #[inline]
    pub fn eval(&self, y: f64) -> f64 {
        y.max(self.f_low).min(self.f_high)
    }
}

/// Shared user-supplied weight function.
pub type WeightHook = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The weight `f` applied to the factor. The clamp is the built-in choice; any
/// other continuous function with values in `[f_low, f_high]` may be plugged in.
#[derive(Clone)]
pub enum WeightFn {
    Clamp(ClampF),
    Custom { bounds: ClampF, f: WeightHook },
}

impl WeightFn {
    #[inline]
    pub fn eval(&self, y: f64) -> f64 {
        match self {
            WeightFn::Clamp(c) => c.eval(y),
            WeightFn::Custom { f, .. } => f(y),
        }
    }

    pub fn bounds(&self) -> ClampF {
        match self {
            WeightFn::Clamp(c) => *c,
            WeightFn::Custom { bounds, .. } => *bounds,
        }
    }
}

impl fmt::Debug for WeightFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightFn::Clamp(c) => f.debug_tuple("Clamp").field(c).finish(),
            WeightFn::Custom { bounds, .. } => f.debug_struct("Custom").field("bounds", bounds).finish_non_exhaustive(),
        }
    }
}

/// Outcome of [`validate_params`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(SliError::InvalidParams(self.violations))
        }
    }
}

/// Checks every standing assumption on `(p, li)` and reports each failure.
pub fn validate_params(p: &ModelParams, li: &LocalIntensity) -> ValidationReport {
    let mut v = Vec::new();

    if p.m < 1 {
        v.push("m >= 1: portfolio must contain at least one name".to_string());
    }
    if !(p.horizon.is_finite() && p.horizon > 0.0) {
        v.push(format!("horizon > 0: got {}", p.horizon));
    }
    if !(p.f_low > 0.0) {
        v.push(format!("f_low > 0: strict positivity violated (f_low = {})", p.f_low));
    }
    if !p.f_high.is_finite() {
        v.push(format!("f_high < ∞: got {}", p.f_high));
    }
    if p.f_low > p.f_high {
        v.push(format!("f_low <= f_high: got [{}, {}]", p.f_low, p.f_high));
    }
    if !(p.lambda_bar.is_finite() && p.lambda_bar > 0.0) {
        v.push(format!("lambda_bar > 0: got {}", p.lambda_bar));
    }

    if li.levels() != p.m + 1 {
        v.push(format!(
            "intensity levels: expected {} loss levels, got {}",
            p.m + 1,
            li.levels()
        ));
    } else {
        if let LocalIntensity::Table(tab) = li {
            if tab.breakpoints.first() != Some(&0.0) {
                v.push("intensity table: first breakpoint must be 0".to_string());
            }
            if tab.breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
                v.push("intensity table: breakpoints must be strictly increasing".to_string());
            }
            if tab.breakpoints.iter().any(|b| !b.is_finite()) {
                v.push("intensity table: breakpoints must be finite".to_string());
            }
            if let Some(x) = tab.values.iter().position(|r| r.len() != tab.breakpoints.len()) {
                v.push(format!(
                    "intensity table: level {x} has {} values for {} intervals",
                    tab.values[x].len(),
                    tab.breakpoints.len()
                ));
            }
            if tab.values.iter().flatten().any(|r| !(r.is_finite() && *r >= 0.0)) {
                v.push("λ >= 0: intensity table has negative or non-finite entries".to_string());
            }
            if tab.values.last().is_some_and(|r| r.iter().any(|&x| x != 0.0)) {
                v.push("λ(·, M) = 0: intensity must vanish at the top loss level".to_string());
            }
        }
        if let LocalIntensity::LinearDecay { lambda_bar, m } = li {
            if !(lambda_bar.is_finite() && *lambda_bar >= 0.0) {
                v.push(format!("λ >= 0: linear-decay scale {lambda_bar} is invalid"));
            }
            if *m != p.m {
                v.push(format!("linear-decay M = {m} differs from portfolio size {}", p.m));
            }
        }
        let sup = li.sup();
        if sup > p.lambda_bar {
            v.push(format!(
                "lambda_bar >= sup λ: bound {} below supremum {sup}",
                p.lambda_bar
            ));
        }
    }

    ValidationReport { violations: v }
}

/// A validated model: parameters, local intensity and weight function.
#[derive(Debug, Clone)]
pub struct SliModel {
    pub params: ModelParams,
    pub intensity: LocalIntensity,
    pub weight: WeightFn,
}

impl SliModel {
    /// Validates `(params, intensity)` and uses the clamp weight from the params.
    pub fn new(params: ModelParams, intensity: LocalIntensity) -> Result<Self> {
        validate_params(&params, &intensity).into_result()?;
        let weight = WeightFn::Clamp(ClampF::new(params.f_low, params.f_high));
        Ok(Self {
            params,
            intensity,
            weight,
        })
    }

    /// Linear-decay intensity with the default clamp.
    pub fn linear_decay(m: usize, lambda_bar: f64, horizon: f64) -> Result<Self> {
        Self::new(
            ModelParams::new(m, lambda_bar, horizon),
            LocalIntensity::linear_decay(lambda_bar, m),
        )
    }

    /// Replaces the weight by a user function; its bounds must be the model's clamp bounds.
    pub fn with_weight(mut self, f: WeightHook) -> Self {
        let bounds = ClampF::new(self.params.f_low, self.params.f_high);
        self.weight = WeightFn::Custom { bounds, f };
        self
    }

    pub fn m(&self) -> usize {
        self.params.m
    }

    pub fn horizon(&self) -> f64 {
        self.params.horizon
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn paper_li() -> LocalIntensity {
        LocalIntensity::linear_decay(2.5, 125)
    }

    #[test]
    fn lambda_linear_decay_values() {
        let li = paper_li();
        assert_eq!(eval_lambda(&li, 1.0, 0.0, 0).unwrap(), 2.5);
        assert_eq!(eval_lambda(&li, 1.0, 0.7, 125).unwrap(), 0.0);
        assert!((eval_lambda(&li, 1.0, 0.3, 25).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn lambda_domain_errors() {
        let li = paper_li();
        assert!(matches!(eval_lambda(&li, 1.0, 0.5, 126), Err(SliError::Domain(_))));
        assert!(matches!(eval_lambda(&li, 1.0, 1.5, 0), Err(SliError::Domain(_))));
        assert!(matches!(eval_lambda(&li, 1.0, -0.1, 0), Err(SliError::Domain(_))));
    }

    #[test]
    fn table_is_right_continuous_with_left_limits() {
        let li = LocalIntensity::table(vec![0.0, 0.5], vec![vec![1.0, 2.0], vec![0.0, 0.0]]);
        assert_eq!(li.rate(0.25, 0), 1.0);
        assert_eq!(li.rate(0.5, 0), 2.0);
        assert_eq!(li.rate_left(0.5, 0), 1.0);
        assert_eq!(li.rate_left(0.5000001, 0), 2.0);
        assert_eq!(li.rate(10.0, 0), 2.0);
        assert_eq!(li.rate_left(0.0, 0), 1.0);
    }

    #[test]
    fn table_nonzero_at_top_level_is_reported_on_evaluation() {
        let li = LocalIntensity::per_level(vec![1.0, 0.1]);
        assert!(eval_lambda(&li, 1.0, 0.0, 1).is_err());
    }

    #[test]
    fn clamp_values() {
        let c = ClampF::new(1.0 / 3.0, 3.0);
        assert_eq!(c.eval(0.0), 1.0 / 3.0);
        assert_eq!(c.eval(10.0), 3.0);
        assert_eq!(c.eval(1.0), 1.0);
        assert_eq!(c.eval(f64::NEG_INFINITY), 1.0 / 3.0);
    }

    #[test]
    fn validate_paper_setting() {
        let p = ModelParams::new(125, 2.5, 1.0).with_clamp(1.0 / 3.0, 3.0);
        assert!(validate_params(&p, &paper_li()).is_valid());
    }

    #[test]
    fn validate_rejects_zero_f_low() {
        let p = ModelParams::new(125, 2.5, 1.0).with_clamp(0.0, 3.0);
        let r = validate_params(&p, &paper_li());
        assert!(!r.is_valid());
        assert!(r.violations.iter().any(|s| s.contains("strict positivity")));
    }

    #[test]
    fn validate_rejects_nonzero_top_level() {
        let p = ModelParams::new(1, 2.5, 1.0);
        let li = LocalIntensity::per_level(vec![1.0, 0.1]);
        let r = validate_params(&p, &li);
        assert!(r.violations.iter().any(|s| s.contains("λ(·, M) = 0")), "{r:?}");
    }

    #[test]
    fn validate_rejects_loose_bound_and_reports_everything() {
        let p = ModelParams {
            m: 2,
            lambda_bar: 1.0,
            f_low: 2.0,
            f_high: 1.0,
            horizon: 0.0,
        };
        let li = LocalIntensity::per_level(vec![3.0, 1.0, 0.0]);
        let r = validate_params(&p, &li);
        assert_eq!(r.violations.len(), 3, "{r:?}");
        assert!(SliModel::new(p, li).is_err());
    }

    #[test]
    fn validate_rejects_level_mismatch() {
        let p = ModelParams::new(3, 1.0, 1.0);
        let r = validate_params(&p, &LocalIntensity::zero(2));
        assert!(!r.is_valid());
    }

    proptest! {
        #[test]
        fn lambda_stays_within_bound(lb in 0.01f64..10.0, m in 1usize..300, t in 0.0f64..5.0, frac in 0.0f64..=1.0) {
            let li = LocalIntensity::linear_decay(lb, m);
            let x = ((m as f64) * frac).round() as usize;
            let v = eval_lambda(&li, 5.0, t, x).unwrap();
            prop_assert!(v >= 0.0 && v <= lb);
        }

        #[test]
        fn clamp_is_idempotent_and_bounded(lo in 0.01f64..1.0, span in 0.0f64..5.0, y in -100.0f64..100.0) {
            let c = ClampF::new(lo, lo + span);
            let fy = c.eval(y);
            prop_assert!(fy >= c.f_low && fy <= c.f_high);
            prop_assert_eq!(c.eval(fy), fy);
        }
    }
}
