mod common;

use common::*;
use mjls::linalg::Mat;
use mjls::oracle::{
    costate_from_definition, costate_relation_residual, decomposition_check, enumerate_paths, exact_cost,
    perturbation_optimality, run_battery, stationarity_of, BatteryOptions, DEFAULT_ENUMERATION_CAP,
};
use mjls::sim::monte_carlo_cost;
use mjls::stability::{is_mss, propagate_second_moment};
use mjls::{optimal_cost_finite, solve_care, solve_finite, CareOptions, MjlsError, MjlsModel, Policy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_staged(rng: &mut ChaCha8Rng, model: &MjlsModel, horizon: usize, amp: f64) -> Policy {
    let (n, m) = (model.state_dim(), model.input_dim());
    Policy::Staged(
        (0..=horizon)
            .map(|_| (0..model.mode_count()).map(|_| random_matrix(rng, m, n, amp)).collect())
            .collect(),
    )
}

#[test]
fn enumeration_matches_riccati_cost() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for trial in 0..200 {
        let model = random_small_model(&mut rng);
        let horizon = rng.gen_range(0..=6);
        let sol = solve_finite(&model, &model.zero_terminal(), horizon).unwrap();
        let value = optimal_cost_finite(&sol, &model).unwrap();
        let exact = exact_cost(&model, &sol.policy().unwrap(), horizon, sol.terminal()).unwrap();
        assert!((exact - value).abs() <= 1e-9 * (1.0 + value), "trial {trial}: {exact} vs {value}");
    }
}

#[test]
fn optimum_satisfies_maximum_principle() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for trial in 0..200 {
        let model = random_small_model(&mut rng);
        let horizon = rng.gen_range(0..=4);
        let sol = solve_finite(&model, &model.zero_terminal(), horizon).unwrap();
        let value = optimal_cost_finite(&sol, &model).unwrap();
        let policy = sol.policy().unwrap();
        let costates = costate_from_definition(&model, &policy, horizon, sol.terminal()).unwrap();
        let stat = stationarity_of(&model, &costates);
        assert!(stat <= 1e-9 * (1.0 + value), "trial {trial}: {stat}");
        let rel = costate_relation_residual(&model, &sol, &costates).unwrap();
        assert!(rel <= 1e-10, "trial {trial}: {rel}");
    }
}

#[test]
fn perturbed_gains_violate_stationarity() {
    let model = reference_model();
    let sol = solve_finite(&model, &model.identity_terminal(), 3).unwrap();
    let Policy::Staged(mut gains) = sol.policy().unwrap() else { unreachable!() };
    gains[1][0][(0, 0)] += 1e-3;
    let costates = costate_from_definition(&model, &Policy::Staged(gains), 3, sol.terminal()).unwrap();
    assert!(stationarity_of(&model, &costates) > 1e-6);
}

#[test]
fn completion_of_squares_holds_for_any_policy() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for trial in 0..100 {
        let model = random_small_model(&mut rng);
        let horizon = rng.gen_range(0..=5);
        let terminal = if trial % 2 == 0 { model.zero_terminal() } else { model.identity_terminal() };
        let sol = solve_finite(&model, &terminal, horizon).unwrap();
        let policy = random_staged(&mut rng, &model, horizon, 1.0);
        let d = decomposition_check(&model, &policy, &sol).unwrap();
        assert!(d.gap <= 1e-9 * (1.0 + d.lhs.abs()), "trial {trial}: {d:?}");
        assert!(d.excess > 0.0);
        let opt = decomposition_check(&model, &sol.policy().unwrap(), &sol).unwrap();
        assert!(opt.gap <= 1e-9 * (1.0 + opt.lhs.abs()));
        assert!(opt.excess <= 1e-9 * (1.0 + opt.lhs.abs()));
    }
}

#[test]
fn gain_perturbations_never_lower_the_cost() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    for _ in 0..20 {
        let model = random_small_model(&mut rng);
        let sol = solve_finite(&model, &model.zero_terminal(), 3).unwrap();
        let value = optimal_cost_finite(&sol, &model).unwrap();
        let worst = perturbation_optimality(&model, &sol, 50, 1e-2, 5).unwrap();
        assert!(worst >= -1e-10 * (1.0 + value));
    }
}

#[test]
fn reference_path_counts() {
    let model = reference_model();
    let ensemble = enumerate_paths(&model, 3, DEFAULT_ENUMERATION_CAP).unwrap();
    // L^(N+2) = 2^5 paths of modes 0..=N+1
    assert_eq!(ensemble.paths.len(), 32);
    assert!((ensemble.total_probability() - 1.0).abs() <= 1e-14);
    let short = enumerate_paths(&model, 2, DEFAULT_ENUMERATION_CAP).unwrap();
    assert_eq!(short.paths.len(), 16);
    assert!((short.total_probability() - 1.0).abs() <= 1e-14);
    let first = &short.paths[0];
    assert_eq!(first.modes, vec![0, 0, 0, 0]);
    assert!((first.probability - 0.5 * 0.9 * 0.9 * 0.9).abs() <= 1e-15);
}

#[test]
fn enumeration_refuses_large_horizons() {
    let model = reference_model();
    let sol = solve_finite(&model, &model.identity_terminal(), 20).unwrap();
    assert!(matches!(
        enumerate_paths(&model, 20, DEFAULT_ENUMERATION_CAP),
        Err(MjlsError::TooLarge { .. })
    ));
    assert!(matches!(
        run_battery(&model, &sol, &BatteryOptions::default()),
        Err(MjlsError::TooLarge { .. })
    ));
}

#[test]
fn exact_cost_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let model = random_small_model(&mut rng);
    let horizon = 4;
    let policy = random_staged(&mut rng, &model, horizon, 0.5);
    let terminal = model.identity_terminal();
    let exact = exact_cost(&model, &policy, horizon, &terminal).unwrap();
    let mc = monte_carlo_cost(&model, &policy, 100_000, 9, horizon, &terminal).unwrap();
    assert!((mc.mean - exact).abs() <= 3.0 * mc.standard_error, "{} vs {exact}", mc.mean);
}

#[test]
fn singular_r_passes_the_battery() {
    let model = singular_r_model();
    for horizon in [0usize, 2, 5] {
        let sol = solve_finite(&model, &model.identity_terminal(), horizon).unwrap();
        let report = run_battery(&model, &sol, &BatteryOptions::default()).unwrap();
        assert!(report.passed(), "{report:?}");
    }
}

#[test]
fn reference_model_passes_the_battery() {
    let model = reference_model();
    let sol = solve_finite(&model, &model.identity_terminal(), 6).unwrap();
    let report = run_battery(&model, &sol, &BatteryOptions::default()).unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn infinite_horizon_cost_splits_into_optimum_and_excess() {
    let model = reference_model();
    let care = solve_care(&model, &CareOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    for _ in 0..10 {
        let gains: Vec<Mat> = care.gain.iter().map(|k| k + random_matrix(&mut rng, 1, 2, 0.05)).collect();
        assert!(is_mss(&model, Some(&gains)).unwrap().stable);
        let chain = propagate_second_moment(&model, Some(&Policy::Stationary(gains.clone())), 3000).unwrap();
        let mut cost = 0.0;
        let mut excess = 0.0;
        for k in 0..=3000 {
            for (i, g) in gains.iter().enumerate() {
                let mode = model.mode(i);
                let w = &mode.q + g.transpose() * &mode.r * g;
                cost += (w * &chain.x[k][i]).trace();
                let dev = g - &care.gain[i];
                excess += (dev.transpose() * &care.upsilon[i] * dev * &chain.x[k][i]).trace();
            }
        }
        let optimum = care.optimal_cost(&model);
        assert!((cost - optimum - excess).abs() <= 1e-6 * cost, "{cost} vs {optimum} + {excess}");
        assert!(excess > 0.0);
    }
}
