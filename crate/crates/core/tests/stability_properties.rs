mod common;

use common::*;
use mjls::linalg::{Mat, Vector};
use mjls::oracle::{enumerate_paths, DEFAULT_ENUMERATION_CAP};
use mjls::sim::simulate_trials;
use mjls::stability::{
    closed_loop_operator, is_exactly_observable, is_mss, is_stabilizable, observability_gramians,
    propagate_second_moment, spectral_radius, ObservabilityOptions, RADIUS_TOL,
};
use mjls::{solve_care, CareOptions, MjlsModel, Mode, ModelData, Policy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn spectral_radius_agrees_with_gelfand_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let t = random_matrix(&mut rng, 8, 8, 1.0);
        let fast = spectral_radius(&t, RADIUS_TOL).unwrap();
        let oracle = gelfand_radius(&t, 40);
        assert!((fast - oracle).abs() <= 1e-6 * (1.0 + oracle), "{fast} vs {oracle}");
    }
}

#[test]
fn lifted_operator_radius_agrees_with_gelfand_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..50 {
        let model = random_small_model(&mut rng);
        let t = closed_loop_operator(&model, None).unwrap();
        let fast = spectral_radius(&t, RADIUS_TOL).unwrap();
        let oracle = gelfand_radius(&t, 40);
        assert!((fast - oracle).abs() <= 1e-6 * (1.0 + oracle), "{fast} vs {oracle}");
    }
}

#[test]
fn second_moments_match_monte_carlo() {
    let model = reference_model();
    let policy = Policy::zero(&model);
    let chain = propagate_second_moment(&model, Some(&policy), 10).unwrap();
    let trials = simulate_trials(&model, &policy, 100_000, 7, 10, &model.zero_terminal()).unwrap();
    for k in [1usize, 5, 10] {
        let samples: Vec<f64> = trials.iter().map(|t| t.states[k].norm_squared()).collect();
        let est = mjls::sim::summarize(&samples);
        let exact = chain.total(k);
        assert!(
            (est.mean - exact).abs() <= 3.0 * est.standard_error,
            "k = {k}: {} vs {exact} (se {})",
            est.mean,
            est.standard_error
        );
    }
}

#[test]
fn closed_loop_moments_match_path_enumeration() {
    let model = reference_model();
    let care = solve_care(&model, &CareOptions::default()).unwrap();
    let chain = propagate_second_moment(&model, Some(&care.policy()), 10).unwrap();
    let ensemble = enumerate_paths(&model, 9, DEFAULT_ENUMERATION_CAP).unwrap();
    for k in [1usize, 5, 10] {
        let exact: f64 = ensemble
            .paths
            .iter()
            .map(|path| {
                let mut x = model.x0().clone();
                for &i in &path.modes[..k] {
                    let mode = model.mode(i);
                    x = (&mode.a + &mode.b * &care.gain[i]) * x;
                }
                path.probability * x.norm_squared()
            })
            .sum();
        assert!((chain.total(k) - exact).abs() <= 1e-10 * exact, "k = {k}");
    }
}

#[test]
fn open_loop_moments_match_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let model = random_small_model(&mut rng);
    let policy = Policy::zero(&model);
    let chain = propagate_second_moment(&model, Some(&policy), 10).unwrap();
    let trials = simulate_trials(&model, &policy, 100_000, 3, 10, &model.zero_terminal()).unwrap();
    for k in [1usize, 5, 10] {
        let samples: Vec<f64> = trials.iter().map(|t| t.states[k].norm_squared()).collect();
        let est = mjls::sim::summarize(&samples);
        let exact = chain.total(k);
        assert!((est.mean - exact).abs() <= 3.0 * est.standard_error + 1e-12 * exact, "k = {k}");
    }
}

#[test]
fn stable_moments_decay_at_the_spectral_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mut tested = 0;
    while tested < 20 {
        let model = random_stabilizable_model(&mut rng, 2, 1, 2);
        let care = solve_care(&model, &CareOptions::default()).unwrap();
        let verdict = is_mss(&model, Some(&care.gain)).unwrap();
        assert!(verdict.stable);
        if verdict.spectral_radius < 0.3 {
            // decays below round-off before k = 40
            continue;
        }
        let chain = propagate_second_moment(&model, Some(&care.policy()), 40).unwrap();
        let ratio = (chain.total(40) / chain.total(20)).powf(1.0 / 20.0);
        assert!(
            (ratio - verdict.spectral_radius).abs() <= 0.1 * verdict.spectral_radius,
            "{ratio} vs {}",
            verdict.spectral_radius
        );
        tested += 1;
    }
}

#[test]
fn lyapunov_function_decreases_by_the_stage_cost() {
    let model = reference_model();
    let care = solve_care(&model, &CareOptions::default()).unwrap();
    let chain = propagate_second_moment(&model, Some(&care.policy()), 60).unwrap();
    let v = |k: usize| -> f64 { (0..2).map(|i| (&care.p[i] * &chain.x[k][i]).trace()).sum() };
    for k in 0..60 {
        let drop = v(k) - v(k + 1);
        let stage: f64 = (0..2)
            .map(|i| {
                let mode = model.mode(i);
                let w = &mode.q + care.gain[i].transpose() * &mode.r * &care.gain[i];
                (w * &chain.x[k][i]).trace()
            })
            .sum();
        assert!(drop >= -1e-12 * v(0));
        assert!((drop - stage).abs() <= 1e-9 * (1.0 + v(k)), "k = {k}");
    }
}

#[test]
fn accumulated_stage_cost_reaches_the_quadratic_value() {
    let model = reference_model();
    let care = solve_care(&model, &CareOptions::default()).unwrap();
    let chain = propagate_second_moment(&model, Some(&care.policy()), 2000).unwrap();
    let total: f64 = (0..=2000)
        .map(|k| {
            (0..2)
                .map(|i| {
                    let mode = model.mode(i);
                    let w = &mode.q + care.gain[i].transpose() * &mode.r * &care.gain[i];
                    (w * &chain.x[k][i]).trace()
                })
                .sum::<f64>()
        })
        .sum();
    let value = care.optimal_cost(&model);
    assert!((total - value).abs() <= 1e-6 * value, "{total} vs {value}");
}

#[test]
fn gramian_kernels_shrink_with_time() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for _ in 0..100 {
        let model = random_small_model(&mut rng);
        let g = observability_gramians(&model, 6).unwrap();
        for t in 0..6 {
            for (next, cur) in g[t + 1].iter().zip(&g[t]) {
                // G(t+1) - G(t) is PSD, so the kernel can only shrink
                assert!(mjls::linalg::min_eigenvalue(&(next - cur)) >= -1e-10 * (1.0 + next.norm()));
                assert!(rank(next, 1e-9) >= rank(cur, 1e-9));
            }
        }
    }
}

fn single_mode(a: Mat, c: Mat) -> MjlsModel {
    let n = a.nrows();
    let q = c.transpose() * &c;
    let q = (&q + q.transpose()) * 0.5;
    MjlsModel::new(ModelData {
        modes: vec![Mode::new(a, Mat::zeros(n, 1), q, s(1.0)).with_output(c)],
        transition: s(1.0),
        initial_distribution: Vector::from_element(1, 1.0),
        x0: Vector::from_element(n, 1.0),
    })
    .unwrap()
}

#[test]
fn single_mode_observability_matches_rank_test() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let (mut observable, mut unobservable) = (0, 0);
    for trial in 0..200 {
        let n = rng.gen_range(1..=3);
        let p = rng.gen_range(1..=2);
        let (a, c) = if trial % 2 == 0 {
            (random_matrix(&mut rng, n, n, 1.0), random_matrix(&mut rng, p, n, 1.0))
        } else {
            // e_1 is an eigenvector of A that C cannot see
            let mut a = random_matrix(&mut rng, n, n, 1.0);
            let mut c = random_matrix(&mut rng, p, n, 1.0);
            for row in 1..n {
                a[(row, 0)] = 0.0;
            }
            c.column_mut(0).fill(0.0);
            (a, c)
        };
        let mut blocks = Mat::zeros(p * n, n);
        let mut power = Mat::identity(n, n);
        for t in 0..n {
            blocks.view_mut((t * p, 0), (p, n)).copy_from(&(&c * &power));
            power = &a * power;
        }
        let expected = rank(&blocks, 1e-9) == n;
        let model = single_mode(a, c);
        let got = is_exactly_observable(&model, &ObservabilityOptions::default()).unwrap();
        assert_eq!(got, expected, "trial {trial}");
        if expected {
            observable += 1;
        } else {
            unobservable += 1;
        }
    }
    assert!(observable > 50 && unobservable > 50);
}

#[test]
fn reference_model_is_stabilizable_and_regulated() {
    let model = reference_model();
    let obs = ObservabilityOptions::default();
    assert!(is_stabilizable(&model, &CareOptions::default(), &obs).unwrap());
    let care = solve_care(&model, &CareOptions::default()).unwrap();
    let verdict = is_mss(&model, Some(&care.gain)).unwrap();
    assert!(verdict.stable && verdict.spectral_radius < 1.0);
}

#[test]
fn stabilizable_negative_control() {
    let model = scalar_model(2.0, 0.0, 1.0, 1.0);
    assert!(!is_stabilizable(&model, &CareOptions::default(), &ObservabilityOptions::default()).unwrap());
    let stable = scalar_model(0.5, 1.0, 1.0, 1.0);
    assert!(is_stabilizable(&stable, &CareOptions::default(), &ObservabilityOptions::default()).unwrap());
}
