//! Brute-force checks of the finite-horizon solution on small instances.
//!
//! Every mode path of positive probability is enumerated, states are rolled
//! forward deterministically along each path, and expectations become exact
//! weighted sums. Conditional expectations given `theta(0..=k)` are sums over
//! the paths sharing that prefix. Nothing here calls the Riccati recursion;
//! the Riccati quantities only enter as the objects being checked.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{MjlsError, Result};
use crate::linalg::{quad_form, Mat, Vector};
use crate::model::{MjlsModel, Policy};
use crate::riccati::{optimal_cost_finite, FiniteHorizonSolution};

pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ModePath {
    /// `theta(0..=N+1)`
    pub modes: Vec<usize>,
    pub probability: f64,
}

/// All mode paths of positive probability over stages `0..=N+1`, in
/// lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub horizon: usize,
    pub paths: Vec<ModePath>,
}

impl PathEnsemble {
    pub fn total_probability(&self) -> f64 {
        self.paths.iter().map(|p| p.probability).sum()
    }
}

/// `L^(N+2)` or `None` on overflow.
fn path_bound(modes: usize, horizon: usize) -> Option<u128> {
    let exp = u32::try_from(horizon.checked_add(2)?).ok()?;
    (modes as u128).checked_pow(exp)
}

pub fn enumerate_paths(model: &MjlsModel, horizon: usize, cap: u128) -> Result<PathEnsemble> {
    let l = model.mode_count();
    let bound = path_bound(l, horizon).unwrap_or(u128::MAX);
    if bound > cap {
        return Err(MjlsError::TooLarge { paths: bound, cap });
    }
    let len = horizon + 2;
    let mut paths = Vec::new();
    let mut prefix = Vec::with_capacity(len);
    extend(model, len, &mut prefix, 1.0, &mut paths);
    Ok(PathEnsemble { horizon, paths })
}

fn extend(model: &MjlsModel, len: usize, prefix: &mut Vec<usize>, prob: f64, out: &mut Vec<ModePath>) {
    if prefix.len() == len {
        out.push(ModePath { modes: prefix.clone(), probability: prob });
        return;
    }
    for j in 0..model.mode_count() {
        let w = match prefix.last() {
            None => model.initial_distribution()[j],
            Some(&i) => model.lambda(i, j),
        };
        if w > 0.0 {
            prefix.push(j);
            extend(model, len, prefix, prob * w, out);
            prefix.pop();
        }
    }
}

/// Open-loop state transition `A_{theta(upper)} ... A_{theta(lower)}`; the
/// identity when `lower == upper + 1`.
pub fn state_transition(model: &MjlsModel, modes: &[usize], upper: usize, lower: usize) -> Mat {
    let n = model.state_dim();
    let mut f = Mat::identity(n, n);
    if lower > upper {
        debug_assert_eq!(lower, upper + 1);
        return f;
    }
    for &i in &modes[lower..=upper] {
        f = &model.mode(i).a * f;
    }
    f
}

struct Rollout {
    states: Vec<Vector>,
    controls: Vec<Vector>,
    cost: f64,
}

fn roll(model: &MjlsModel, policy: &Policy, modes: &[usize], terminal: &[Mat]) -> Rollout {
    let horizon = modes.len() - 2;
    let mut states = vec![model.x0().clone()];
    let mut controls = Vec::with_capacity(horizon + 1);
    let mut cost = 0.0;
    for (k, &i) in modes.iter().enumerate().take(horizon + 1) {
        let mode = model.mode(i);
        let u = policy.gain(k, i).expect("policy checked") * &states[k];
        cost += quad_form(&mode.q, &states[k]) + quad_form(&mode.r, &u);
        let next = &mode.a * &states[k] + &mode.b * &u;
        controls.push(u);
        states.push(next);
    }
    cost += quad_form(&terminal[modes[horizon + 1]], &states[horizon + 1]);
    Rollout { states, controls, cost }
}

fn prepare(model: &MjlsModel, policy: &Policy, horizon: usize, terminal: &[Mat]) -> Result<PathEnsemble> {
    policy.check(model, Some(horizon + 1))?;
    let n = model.state_dim();
    if terminal.len() != model.mode_count() || terminal.iter().any(|p| p.shape() != (n, n)) {
        return Err(MjlsError::InvalidInput("one n x n terminal matrix per mode required".into()));
    }
    enumerate_paths(model, horizon, DEFAULT_ENUMERATION_CAP)
}

/// `E[J_N]` under `policy`, summed over the enumerated paths.
pub fn exact_cost(model: &MjlsModel, policy: &Policy, horizon: usize, terminal: &[Mat]) -> Result<f64> {
    let ensemble = prepare(model, policy, horizon, terminal)?;
    Ok(ensemble
        .paths
        .iter()
        .map(|p| p.probability * roll(model, policy, &p.modes, terminal).cost)
        .sum())
}

/// Costate conditioned on one prefix `theta(0..=k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixCostate {
    pub prefix: Vec<usize>,
    pub probability: f64,
    /// `x(k)`, `u(k)` and `x(k+1)` are fixed by the prefix.
    pub state: Vector,
    pub control: Vector,
    pub next_state: Vector,
    pub eta: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostateSequence {
    /// `stages[k]` holds one entry per prefix of length `k + 1`.
    pub stages: Vec<Vec<PrefixCostate>>,
}

/// `eta_k = E[ sum_{t=k+1}^{N} F(t-1,k+1)' Q x(t) + F(N,k+1)' P_T x(N+1) | theta(0..=k) ]`
/// evaluated literally on every prefix.
pub fn costate_from_definition(
    model: &MjlsModel,
    policy: &Policy,
    horizon: usize,
    terminal: &[Mat],
) -> Result<CostateSequence> {
    let ensemble = prepare(model, policy, horizon, terminal)?;
    let n = model.state_dim();
    let mut groups: Vec<BTreeMap<Vec<usize>, PrefixCostate>> =
        (0..=horizon).map(|_| BTreeMap::new()).collect();

    for path in &ensemble.paths {
        let modes = &path.modes;
        let r = roll(model, policy, modes, terminal);
        for (k, group) in groups.iter_mut().enumerate() {
            let mut value = Vector::zeros(n);
            for t in k + 1..=horizon {
                let f = state_transition(model, modes, t - 1, k + 1);
                value += f.transpose() * (&model.mode(modes[t]).q * &r.states[t]);
            }
            let f = state_transition(model, modes, horizon, k + 1);
            value += f.transpose() * (&terminal[modes[horizon + 1]] * &r.states[horizon + 1]);

            // accumulate probability-weighted sums; normalized below
            let entry = group.entry(modes[..=k].to_vec()).or_insert_with(|| PrefixCostate {
                prefix: modes[..=k].to_vec(),
                probability: 0.0,
                state: r.states[k].clone(),
                control: r.controls[k].clone(),
                next_state: r.states[k + 1].clone(),
                eta: Vector::zeros(n),
            });
            entry.probability += path.probability;
            entry.eta += value * path.probability;
        }
    }

    let stages = groups
        .into_iter()
        .map(|group| {
            group
                .into_values()
                .map(|mut c| {
                    c.eta /= c.probability;
                    c
                })
                .collect()
        })
        .collect();
    Ok(CostateSequence { stages })
}

/// `max_{k, prefix} |B' eta_k + R u(k)|`: the first-order condition of the
/// maximum principle, zero at the optimum.
pub fn stationarity_residual(
    model: &MjlsModel,
    policy: &Policy,
    horizon: usize,
    terminal: &[Mat],
) -> Result<f64> {
    let costates = costate_from_definition(model, policy, horizon, terminal)?;
    Ok(stationarity_of(model, &costates))
}

pub fn stationarity_of(model: &MjlsModel, costates: &CostateSequence) -> f64 {
    costates
        .stages
        .iter()
        .flatten()
        .map(|c| {
            let mode = model.mode(*c.prefix.last().unwrap());
            (mode.b.transpose() * &c.eta + &mode.r * &c.control).norm()
        })
        .fold(0.0, f64::max)
}

/// `max_{k, prefix} |eta_k - (sum_j lambda_{theta(k) j} P_j(k+1)) x(k+1)| / (1 + |reference|)`.
pub fn costate_relation_residual(
    model: &MjlsModel,
    sol: &FiniteHorizonSolution,
    costates: &CostateSequence,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (k, stage) in costates.stages.iter().enumerate() {
        let p_next = sol
            .p(k + 1)
            .ok_or_else(|| MjlsError::InvalidState(format!("no Riccati matrices at stage {}", k + 1)))?;
        for c in stage {
            let avg = model.mode_average(p_next, *c.prefix.last().unwrap())?;
            let reference = avg * &c.next_state;
            worst = worst.max((&c.eta - &reference).norm() / (1.0 + reference.norm()));
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Decomposition {
    /// Exact cost of the policy.
    pub lhs: f64,
    /// Optimal cost plus the Upsilon-weighted deviation penalty.
    pub rhs: f64,
    pub gap: f64,
    /// `sum_k E[(u - K x)' Upsilon (u - K x)]`
    pub excess: f64,
}

/// Completion-of-squares identity for an arbitrary staged or stationary
/// policy, evaluated exactly over the path ensemble.
pub fn decomposition_check(
    model: &MjlsModel,
    policy: &Policy,
    sol: &FiniteHorizonSolution,
) -> Result<Decomposition> {
    sol.ensure_solvable()?;
    let horizon = sol.horizon();
    let terminal = sol.terminal();
    let ensemble = prepare(model, policy, horizon, terminal)?;
    let mut lhs = 0.0;
    let mut excess = 0.0;
    for path in &ensemble.paths {
        let r = roll(model, policy, &path.modes, terminal);
        lhs += path.probability * r.cost;
        let mut pen = 0.0;
        for k in 0..=horizon {
            let i = path.modes[k];
            let stage = sol.stage(k).expect("solvable");
            let dev = &r.controls[k] - &stage.gain[i] * &r.states[k];
            pen += quad_form(&stage.upsilon[i], &dev);
        }
        excess += path.probability * pen;
    }
    let rhs = optimal_cost_finite(sol, model)? + excess;
    Ok(Decomposition { lhs, rhs, gap: (lhs - rhs).abs(), excess })
}

/// Smallest `cost(K + D) - cost(K)` over `count` random staged perturbations
/// `D` with entries in `[-scale, scale]`. `+inf` when `count == 0`.
pub fn perturbation_optimality(
    model: &MjlsModel,
    sol: &FiniteHorizonSolution,
    count: usize,
    scale: f64,
    seed: u64,
) -> Result<f64> {
    let optimal = sol.policy()?;
    let horizon = sol.horizon();
    let terminal = sol.terminal();
    let base = exact_cost(model, &optimal, horizon, terminal)?;
    let Policy::Staged(gains) = &optimal else { unreachable!("finite-horizon policies are staged") };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..count {
        let perturbed: Vec<Vec<Mat>> = gains
            .iter()
            .map(|stage| {
                stage
                    .iter()
                    .map(|g| g.map(|v| v + scale * (2.0 * rng.gen::<f64>() - 1.0)))
                    .collect()
            })
            .collect();
        let cost = exact_cost(model, &Policy::Staged(perturbed), horizon, terminal)?;
        worst = worst.min(cost - base);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationCheck {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VerificationReport {
    pub horizon: usize,
    pub optimal_cost: f64,
    pub checks: Vec<VerificationCheck>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &str, residual: f64, tolerance: f64) {
        self.checks.push(VerificationCheck {
            name: name.into(),
            residual,
            tolerance,
            passed: residual <= tolerance,
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryOptions {
    pub perturbations: usize,
    pub perturbation_scale: f64,
    pub seed: u64,
}

impl Default for BatteryOptions {
    fn default() -> Self {
        Self { perturbations: 100, perturbation_scale: 1e-2, seed: 0 }
    }
}

/// Full oracle battery on one solved instance. Tolerances are relative to
/// `1 + optimal cost`.
pub fn run_battery(
    model: &MjlsModel,
    sol: &FiniteHorizonSolution,
    opts: &BatteryOptions,
) -> Result<VerificationReport> {
    let horizon = sol.horizon();
    let terminal = sol.terminal();
    // fail fast before any work when enumeration is out of reach
    let bound = path_bound(model.mode_count(), horizon).unwrap_or(u128::MAX);
    if bound > DEFAULT_ENUMERATION_CAP {
        return Err(MjlsError::TooLarge { paths: bound, cap: DEFAULT_ENUMERATION_CAP });
    }
    let optimal_cost = optimal_cost_finite(sol, model)?;
    let scale = 1.0 + optimal_cost.abs();
    let policy = sol.policy()?;
    let mut report = VerificationReport { horizon, optimal_cost, ..Default::default() };

    let exact = exact_cost(model, &policy, horizon, terminal)?;
    report.push("optimal_cost_matches_enumeration", (exact - optimal_cost).abs() / scale, 1e-9);

    let costates = costate_from_definition(model, &policy, horizon, terminal)?;
    report.push("stationarity", stationarity_of(model, &costates) / scale, 1e-9);
    report.push("costate_relation", costate_relation_residual(model, sol, &costates)?, 1e-10);

    let d = decomposition_check(model, &policy, sol)?;
    report.push("decomposition_gap_optimal", d.gap / (1.0 + d.lhs.abs()), 1e-9);
    report.push("decomposition_excess_optimal", d.excess / scale, 1e-9);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let Policy::Staged(gains) = &policy else { unreachable!() };
    let random = Policy::Staged(
        gains
            .iter()
            .map(|s| s.iter().map(|g| g.map(|_| 2.0 * rng.gen::<f64>() - 1.0)).collect())
            .collect(),
    );
    let d = decomposition_check(model, &random, sol)?;
    report.push("decomposition_gap_random_policy", d.gap / (1.0 + d.lhs.abs()), 1e-9);

    let worst = perturbation_optimality(
        model,
        sol,
        opts.perturbations,
        opts.perturbation_scale,
        opts.seed,
    )?;
    // a cost decrease below the noise floor would contradict optimality
    report.push("perturbation_no_decrease", (-worst).max(0.0) / scale, 1e-10);
    Ok(report)
}
