use std::path::Path;

use mjls::export::{load_matrix_list, load_model, write_moment_csv, write_riccati_csv, write_trajectory_csv, Rows};
use mjls::linalg::{to_rows, Mat};
use mjls::oracle::{run_battery, BatteryOptions, VerificationCheck};
use mjls::sim::{simulate_trials, summarize, McEstimate};
use mjls::stability::{
    is_exactly_observable, is_mss, is_stabilizable, propagate_second_moment, MssVerdict, ObservabilityOptions,
};
use mjls::{optimal_cost_finite, CareOptions, MjlsError, MjlsModel, Policy};
use serde::Serialize;

use crate::{CareArgs, CheckArgs, Common, Failure, FiniteArgs, HorizonArgs, IterationArgs, SimulateArgs, VerifyArgs};

type Outcome = Result<(), Failure>;

fn model(common: &Common) -> Result<MjlsModel, Failure> {
    Ok(load_model(&common.model)?)
}

fn terminal(model: &MjlsModel, spec: &str) -> Result<Vec<Mat>, Failure> {
    match spec {
        "zero" => Ok(model.zero_terminal()),
        "identity" => Ok(model.identity_terminal()),
        path => {
            let mut list = load_matrix_list(Path::new(path))?;
            if list.len() == 1 && model.mode_count() > 1 {
                list = vec![list[0].clone(); model.mode_count()];
            }
            Ok(list)
        }
    }
}

fn solve(model: &MjlsModel, h: &HorizonArgs) -> Result<mjls::FiniteHorizonSolution, Failure> {
    let terminal = terminal(model, &h.terminal)?;
    Ok(mjls::solve_finite(model, &terminal, h.horizon)?)
}

fn care_options(it: &IterationArgs) -> Result<CareOptions, Failure> {
    if !(it.tol > 0.0 && it.tol.is_finite()) {
        return Err(MjlsError::InvalidInput(format!("tolerance must be positive, got {}", it.tol)).into());
    }
    if it.max_iter == 0 {
        return Err(MjlsError::InvalidInput("max-iter must be positive".into()).into());
    }
    Ok(CareOptions { tol: it.tol, max_iter: it.max_iter, ..CareOptions::default() })
}

fn observability(strict: bool) -> ObservabilityOptions {
    ObservabilityOptions { strict, ..ObservabilityOptions::default() }
}

fn write(out: &Path, name: &str, bytes: &[u8]) -> Outcome {
    let io = |e: std::io::Error| Failure::Io(format!("{}: {e}", out.display()));
    std::fs::create_dir_all(out).map_err(io)?;
    std::fs::write(out.join(name), bytes).map_err(io)
}

fn write_json<T: Serialize>(out: &Path, name: &str, value: &T) -> Outcome {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write(out, name, text.as_bytes())
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> mjls::Result<()>) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

#[derive(Serialize)]
struct StageGains {
    k: usize,
    gains: Vec<Rows>,
    upsilon_min_eigenvalues: Vec<f64>,
}

#[derive(Serialize)]
struct FiniteReport {
    horizon: usize,
    optimal_cost: f64,
    stages: Vec<StageGains>,
}

pub fn solve_finite(a: &FiniteArgs) -> Outcome {
    let model = model(&a.common)?;
    let sol = solve(&model, &a.horizon)?;
    let cost = optimal_cost_finite(&sol, &model)?;
    let stages = (0..=sol.horizon())
        .map(|k| {
            let s = sol.stage(k).expect("solvable");
            StageGains {
                k,
                gains: s.gain.iter().map(to_rows).collect(),
                upsilon_min_eigenvalues: s.upsilon_min_eigenvalue.clone(),
            }
        })
        .collect();
    let out = &a.common.out;
    write(out, "riccati.csv", &csv_bytes(|b| write_riccati_csv(&sol, b))?)?;
    write_json(out, "gains.json", &FiniteReport { horizon: sol.horizon(), optimal_cost: cost, stages })?;
    println!("optimal cost: {cost}");
    Ok(())
}

#[derive(Serialize)]
struct CareReport {
    iterations: usize,
    final_increment: f64,
    residual: f64,
    min_eigenvalues: Vec<f64>,
    positive_definite: bool,
    optimal_cost: f64,
    #[serde(rename = "P")]
    p: Vec<Rows>,
    gains: Vec<Rows>,
    closed_loop: MssVerdict,
}

pub fn solve_care(a: &CareArgs) -> Outcome {
    let model = model(&a.common)?;
    let opts = care_options(&a.iteration)?;
    for (i, mode) in model.modes().iter().enumerate() {
        let min_eig = mjls::linalg::min_eigenvalue(&mode.r);
        if !(min_eig > mjls::linalg::pd_threshold(&mode.r, opts.pd_tol)) {
            return Err(MjlsError::PreconditionFailed(format!("R of mode {} is not positive definite", i + 1)).into());
        }
    }
    if !is_exactly_observable(&model, &observability(a.strict_observability))? {
        return Err(MjlsError::PreconditionFailed("(C, A) is not exactly observable".into()).into());
    }
    let care = mjls::solve_care(&model, &opts)?;
    let closed_loop = is_mss(&model, Some(&care.gain))?;
    let report = CareReport {
        iterations: care.iterations,
        final_increment: care.final_increment,
        residual: care.residual,
        min_eigenvalues: care.min_eigenvalues.clone(),
        positive_definite: true,
        optimal_cost: care.optimal_cost(&model),
        p: care.p.iter().map(to_rows).collect(),
        gains: care.gain.iter().map(to_rows).collect(),
        closed_loop,
    };
    write_json(&a.common.out, "care.json", &report)?;
    println!(
        "converged in {} iterations, residual {:e}, closed-loop spectral radius {}",
        care.iterations, care.residual, closed_loop.spectral_radius
    );
    Ok(())
}

#[derive(Serialize)]
struct CheckReport {
    open_loop: MssVerdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    closed_loop: Option<MssVerdict>,
    observable: bool,
    strict_observability: bool,
    /// `None` when the stabilizability test does not apply.
    stabilizable: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stabilizability_note: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    optimal_closed_loop: Option<MssVerdict>,
}

pub fn check(a: &CheckArgs) -> Outcome {
    let model = model(&a.common)?;
    let opts = care_options(&a.iteration)?;
    let obs = observability(a.strict_observability);
    let open_loop = is_mss(&model, None)?;
    let closed_loop = match &a.gains {
        Some(path) => {
            let gains = load_matrix_list(path)?;
            Policy::Stationary(gains.clone()).check(&model, None)?;
            Some(is_mss(&model, Some(&gains))?)
        }
        None => None,
    };
    let observable = is_exactly_observable(&model, &obs)?;
    let (stabilizable, note) = match is_stabilizable(&model, &opts, &obs) {
        Ok(v) => (Some(v), None),
        Err(MjlsError::PreconditionFailed(m)) => (None, Some(m)),
        Err(e) => return Err(e.into()),
    };
    let optimal_closed_loop = match stabilizable {
        Some(true) => Some(is_mss(&model, Some(&mjls::solve_care(&model, &opts)?.gain))?),
        _ => None,
    };
    let report = CheckReport {
        open_loop,
        closed_loop,
        observable,
        strict_observability: a.strict_observability,
        stabilizable,
        stabilizability_note: note,
        optimal_closed_loop,
    };
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{text}");
    write(&a.common.out, "check.json", format!("{text}\n").as_bytes())
}

#[derive(Serialize)]
struct StateEnergy {
    k: usize,
    exact: f64,
    monte_carlo: f64,
}

#[derive(Serialize)]
struct CostReport {
    horizon: usize,
    trials: usize,
    seed: u64,
    optimal_cost: f64,
    monte_carlo: McEstimate,
    /// `E|x(k)|^2` from exact moments and from the sampled trajectories
    state_energy: Vec<StateEnergy>,
}

pub fn simulate(a: &SimulateArgs) -> Outcome {
    if a.trials < 2 {
        return Err(MjlsError::InvalidInput("at least two trials are required".into()).into());
    }
    let model = model(&a.common)?;
    let sol = solve(&model, &a.horizon)?;
    let policy = sol.policy()?;
    let horizon = sol.horizon();
    let trajectories = simulate_trials(&model, &policy, a.trials, a.seed, horizon, sol.terminal())?;
    let chain = propagate_second_moment(&model, Some(&policy), horizon + 1)?;
    let costs: Vec<f64> = trajectories.iter().map(|t| t.total_cost).collect();
    let state_energy = (0..=horizon + 1)
        .map(|k| {
            let sampled: Vec<f64> = trajectories.iter().map(|t| t.states[k].norm_squared()).collect();
            StateEnergy { k, exact: chain.total(k), monte_carlo: summarize(&sampled).mean }
        })
        .collect();
    let report = CostReport {
        horizon,
        trials: a.trials,
        seed: a.seed,
        optimal_cost: optimal_cost_finite(&sol, &model)?,
        monte_carlo: summarize(&costs),
        state_energy,
    };
    let out = &a.common.out;
    write(out, "trajectories.csv", &csv_bytes(|b| write_trajectory_csv(&trajectories, b))?)?;
    write(out, "moments.csv", &csv_bytes(|b| write_moment_csv(&chain, b))?)?;
    write_json(out, "cost.json", &report)?;
    println!(
        "optimal cost {}, Monte Carlo {} +/- {} over {} trials",
        report.optimal_cost, report.monte_carlo.mean, report.monte_carlo.standard_error, a.trials
    );
    Ok(())
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    passed: bool,
    horizon: usize,
    optimal_cost: f64,
    checks: &'a [VerificationCheck],
}

pub fn verify(a: &VerifyArgs) -> Outcome {
    let model = model(&a.common)?;
    let sol = solve(&model, &a.horizon)?;
    let opts = BatteryOptions { perturbations: a.perturbations, seed: a.seed, ..BatteryOptions::default() };
    let report = run_battery(&model, &sol, &opts)?;
    let passed = report.passed();
    write_json(
        &a.common.out,
        "verification.json",
        &VerifyReport { passed, horizon: report.horizon, optimal_cost: report.optimal_cost, checks: &report.checks },
    )?;
    for c in &report.checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        println!("{tag} {} residual {:e} tolerance {:e}", c.name, c.residual, c.tolerance);
    }
    if passed {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        Err(Failure::Verification(format!("verification failed: {}", failed.join(", "))))
    }
}
