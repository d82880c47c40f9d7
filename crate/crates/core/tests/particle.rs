use proptest::prelude::*;
use sli_core::{run_system, Algorithm, EngineOptions, FactorDynamics, InitialLaw, SliError, SliModel};

fn model() -> SliModel {
    SliModel::linear_decay(30, 3.0, 1.0).unwrap()
}

#[test]
fn same_seed_same_paths_and_seeds_differ() {
    let d = FactorDynamics::cir(1.0, 0.3, 1.0);
    let opts = EngineOptions::new(500, 20);
    let a = run_system(&model(), &d, &opts, 9).unwrap();
    let b = run_system(&model(), &d, &opts, 9).unwrap();
    let c = run_system(&model(), &d, &opts, 10).unwrap();
    assert_eq!(a.paths, b.paths);
    assert_ne!(a.paths, c.paths);
}

#[test]
fn parallel_grid_advance_is_bitwise_sequential() {
    let d = FactorDynamics::lognormal(1.0, 0.3, 1.0, 1.0);
    let opts = EngineOptions::new(6000, 25).record_y_grid(true);
    let par = run_system(&model(), &d, &opts.clone().parallel(true), 4).unwrap();
    let seq = run_system(&model(), &d, &opts.parallel(false), 4).unwrap();
    assert_eq!(par.paths, seq.paths);
}

#[test]
fn y_grid_has_one_value_per_date() {
    let d = FactorDynamics::cir(1.0, 0.3, 1.0);
    let run = run_system(&model(), &d, &EngineOptions::new(50, 8).record_y_grid(true), 1).unwrap();
    for p in &run.paths {
        let g = p.y_grid.as_ref().unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], 1.0);
        assert!(g.iter().all(|y| y.is_finite() && *y >= 0.0));
    }
}

#[test]
fn bad_options_are_rejected() {
    let d = FactorDynamics::cir(1.0, 0.3, 1.0);
    assert!(matches!(
        run_system(&model(), &d, &EngineOptions::new(0, 10), 1),
        Err(SliError::Domain(_))
    ));
    assert!(run_system(&model(), &d, &EngineOptions::new(10, 0), 1).is_err());
    let bad = EngineOptions::new(10, 10).initial(InitialLaw::Dirac { x0: 31 });
    assert!(run_system(&model(), &d, &bad, 1).is_err());
    assert!(run_system(
        &model(),
        &FactorDynamics::cir(-1.0, 0.3, 1.0),
        &EngineOptions::new(10, 10),
        1
    )
    .is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn paths_are_well_formed(
        n in 1usize..200,
        d in 1usize..20,
        seed in any::<u64>(),
        x0 in 0usize..5,
        naive in any::<bool>(),
    ) {
        let alg = if naive { Algorithm::Naive } else { Algorithm::Improved };
        let opts = EngineOptions::new(n, d).algorithm(alg).audit(true).initial(InitialLaw::Dirac { x0 });
        let run = run_system(&model(), &FactorDynamics::cir(1.0, 0.3, 1.0), &opts, seed).unwrap();
        prop_assert_eq!(run.paths.len(), n);
        prop_assert_eq!(run.stats.accepted as usize, run.paths.iter().map(|p| p.jump_times.len()).sum::<usize>());
        prop_assert!(run.stats.max_ratio <= 1.0);
        for p in &run.paths {
            prop_assert_eq!(p.x_initial, x0);
            prop_assert_eq!(p.x_terminal, x0 + p.jump_times.len());
            prop_assert!(p.x_terminal <= 30);
            prop_assert!(p.jump_times.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(p.jump_times.iter().all(|&t| t > 0.0 && t <= 1.0));
        }
    }
}
