use sli_core::discrete::{phi, solve_fp};
use sli_core::li::binomial_pmf;
use sli_core::{DiscreteModel, FpOptions, GeneratorFamily, LocalIntensity, ModelParams, SliModel};

/// `exp(tQ)` row for start state `s` by uniformisation.
fn expm_row(q: &[Vec<f64>], s: usize, t: f64) -> Vec<f64> {
    let j = q.len();
    let rate = (0..j).map(|i| -q[i][i]).fold(0.0, f64::max);
    let mut v = vec![0.0; j];
    v[s] = 1.0;
    let mut out = vec![0.0; j];
    let mut w = (-rate * t).exp();
    for k in 0..400 {
        for (o, x) in out.iter_mut().zip(&v) {
            *o += w * x;
        }
        let mut next = vec![0.0; j];
        for a in 0..j {
            for b in 0..j {
                let p = if a == b { 1.0 + q[a][b] / rate } else { q[a][b] / rate };
                next[b] += v[a] * p;
            }
        }
        v = next;
        w *= rate * t / (k + 1) as f64;
    }
    out
}

fn three_state() -> Vec<Vec<f64>> {
    vec![vec![-1.1, 0.6, 0.5], vec![0.2, -0.9, 0.7], vec![1.4, 0.3, -1.7]]
}

#[test]
fn pure_factor_chain_matches_matrix_exponential() {
    let q = three_state();
    let model = SliModel::new(ModelParams::new(1, 1.0, 2.0), LocalIntensity::zero(1)).unwrap();
    let gen = GeneratorFamily::uniform(q.clone(), 2).unwrap();
    let dm = DiscreteModel::new(model, gen, vec![0.5, 1.0, 2.0]).unwrap();
    let traj = solve_fp(&dm, &dm.dirac(0, 1).unwrap(), 2.0, &FpOptions::new(1e-3)).unwrap();
    for s in traj.states.iter().step_by(100) {
        let row = expm_row(&q, 1, s.t);
        for (j, e) in row.iter().enumerate() {
            assert!((s.get(0, j) - e).abs() < 1e-11, "t = {} j = {j}", s.t);
        }
    }
}

#[test]
fn constant_weight_gives_independent_product_law() {
    let q = three_state();
    let li = LocalIntensity::linear_decay(3.0, 4);
    let model = SliModel::new(ModelParams::new(4, 3.0, 1.5), li.clone()).unwrap();
    let gen = GeneratorFamily::uniform(q.clone(), 5).unwrap();
    let dm = DiscreteModel::new(model, gen, vec![1.3; 3]).unwrap();
    let traj = solve_fp(&dm, &dm.dirac(0, 2).unwrap(), 1.5, &FpOptions::new(1e-3)).unwrap();
    let last = traj.last();
    let x = binomial_pmf(&li, 1.5).unwrap();
    let y = expm_row(&q, 2, 1.5);
    for (i, xi) in x.iter().enumerate() {
        for (j, yj) in y.iter().enumerate() {
            assert!((last.get(i, j) - xi * yj).abs() < 1e-11);
        }
    }
}

#[test]
fn phi_is_a_weighted_mean_of_the_factor_values() {
    let f = [0.5, 1.0, 2.0];
    let p = [0.1, 0.2, 0.3, 0.0, 0.0, 0.0];
    let v = phi(&p, 3, 0, &f, 0.25);
    assert!((v - (0.05 + 0.2 + 0.6) / 0.6).abs() < 1e-15);
    assert_eq!(phi(&p, 3, 1, &f, 0.25), 0.25);
}
