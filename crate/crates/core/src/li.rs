//! The local-intensity chain: unit jumps at rate `λ(t-, X_{t-})`, simulated
//! by thinning a rate-`λ̄` Poisson stream, plus the binomial law it has for
//! the linear-decay intensity.

use rand::Rng;
use statrs::distribution::{Binomial, Discrete};

use crate::error::{Result, SliError};
use crate::exec::map_indices;
use crate::model::{LocalIntensity, SliModel};
use crate::particle::PathRecord;
use crate::rng::{exponential, particle_stream, StreamRole};

/// An LI trajectory has the same shape as a particle record.
pub type LiPath = PathRecord;

/// One LI path on `[0, T]` started from `x0`.
pub fn simulate_li_path<R: Rng + ?Sized>(model: &SliModel, x0: usize, rng: &mut R) -> Result<LiPath> {
    let m = model.m();
    if x0 > m {
        return Err(SliError::Domain(format!("initial level {x0} outside {{0..{m}}}")));
    }
    let bound = model.params.lambda_bar;
    let horizon = model.horizon();
    let mut jumps = Vec::new();
    let mut x = x0;
    let mut t = 0.0;
    while x < m {
        t += exponential(rng, bound);
        if t > horizon {
            break;
        }
        let u: f64 = rng.random();
        if u * bound < model.intensity.rate_left(t, x) {
            jumps.push(t);
            x += 1;
        }
    }
    Ok(PathRecord::new(x0, jumps))
}

/// `n` independent LI paths; path `p` uses substream `p` of `seed`.
pub fn simulate_li_paths(model: &SliModel, x0: usize, n: usize, seed: u64, parallel: bool) -> Result<Vec<LiPath>> {
    map_indices(n, parallel, |p| {
        simulate_li_path(model, x0, &mut particle_stream(seed, p, StreamRole::System))
    })
    .into_iter()
    .collect()
}

/// `P(X_t = k)` for the linear-decay intensity: `Binomial(M, 1 - e^{-λ̄ t / M})`.
pub fn binomial_oracle(li: &LocalIntensity, t: f64, k: usize) -> Result<f64> {
    let (lambda_bar, m) = match li {
        LocalIntensity::LinearDecay { lambda_bar, m } => (*lambda_bar, *m),
        _ => {
            return Err(SliError::Unsupported(
                "binomial law only holds for the linear-decay intensity".into(),
            ))
        }
    };
    if k > m {
        return Err(SliError::Domain(format!("loss level {k} outside {{0..{m}}}")));
    }
    if !(t >= 0.0) {
        return Err(SliError::Domain(format!("negative time {t}")));
    }
    let p = -(-lambda_bar * t / m as f64).exp_m1();
    let b = Binomial::new(p, m as u64).map_err(|e| SliError::Domain(e.to_string()))?;
    Ok(b.pmf(k as u64))
}

/// The whole binomial pmf over `{0..M}` at time `t`.
pub fn binomial_pmf(li: &LocalIntensity, t: f64) -> Result<Vec<f64>> {
    (0..li.levels()).map(|k| binomial_oracle(li, t, k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;
    use crate::rng::rng_from_seed;
    use approx::assert_relative_eq;

    #[test]
    fn oracle_values() {
        let li = LocalIntensity::linear_decay(2.5, 125);
        // p = 1 - e^{-0.02}
        let p = 1.0 - (-0.02f64).exp();
        assert_relative_eq!(p, 0.019801326693244747, max_relative = 1e-15);
        assert_relative_eq!(
            binomial_oracle(&li, 1.0, 0).unwrap(),
            (-2.5f64).exp(),
            max_relative = 1e-12
        );
        assert_relative_eq!(
            binomial_oracle(&li, 1.0, 0).unwrap(),
            0.0820849986238988,
            max_relative = 1e-12
        );
        let pmf = binomial_pmf(&li, 1.0).unwrap();
        assert_relative_eq!(pmf.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let dirac = binomial_pmf(&li, 0.0).unwrap();
        assert_eq!(dirac[0], 1.0);
        assert!(dirac[1..].iter().all(|&q| q == 0.0));
    }

    #[test]
    fn oracle_rejects_tables() {
        let li = LocalIntensity::per_level(vec![1.0, 0.0]);
        assert!(matches!(binomial_oracle(&li, 1.0, 0), Err(SliError::Unsupported(_))));
    }

    #[test]
    fn no_jumps_from_zero_intensity_or_top_level() {
        let model = SliModel::new(ModelParams::new(4, 1.0, 1.0), LocalIntensity::zero(4)).unwrap();
        let mut rng = rng_from_seed(1);
        for _ in 0..100 {
            assert!(simulate_li_path(&model, 0, &mut rng).unwrap().jump_times.is_empty());
        }
        let model = SliModel::linear_decay(4, 3.0, 1.0).unwrap();
        let p = simulate_li_path(&model, 4, &mut rng).unwrap();
        assert!(p.jump_times.is_empty());
        assert_eq!(p.x_terminal, 4);
        assert!(simulate_li_path(&model, 5, &mut rng).is_err());
    }

    #[test]
    fn paths_are_reproducible_and_well_formed() {
        let model = SliModel::linear_decay(10, 5.0, 2.0).unwrap();
        let a = simulate_li_paths(&model, 0, 500, 3, true).unwrap();
        let b = simulate_li_paths(&model, 0, 500, 3, false).unwrap();
        assert_eq!(a, b);
        for p in &a {
            assert!(p.jump_times.windows(2).all(|w| w[0] < w[1]));
            assert!(p.jump_times.iter().all(|&t| t > 0.0 && t <= 2.0));
            assert!(p.x_terminal <= 10);
        }
    }

    #[test]
    fn terminal_law_matches_binomial() {
        let model = SliModel::linear_decay(20, 4.0, 1.0).unwrap();
        let n = 40_000;
        let paths = simulate_li_paths(&model, 0, n, 17, true).unwrap();
        let pmf = binomial_pmf(&model.intensity, 1.0).unwrap();
        let mut counts = [0usize; 21];
        for p in &paths {
            counts[p.x_terminal] += 1;
        }
        for (k, &q) in pmf.iter().enumerate() {
            if q < 1e-3 {
                continue;
            }
            let f = counts[k] as f64 / n as f64;
            let se = (q * (1.0 - q) / n as f64).sqrt();
            assert!((f - q).abs() < 4.0 * se, "k={k}: {f} vs {q}");
        }
    }
}
