//! Mode-path sampling, closed-loop rollouts and Monte Carlo cost estimates.
//!
//! Every trial draws from its own ChaCha stream, selected by the trial index
//! on top of the user seed, so results do not depend on how trials are
//! scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{MjlsError, Result};
use crate::linalg::{pairwise_sum, quad_form, Mat, Vector};
use crate::model::{MjlsModel, Policy};

/// One sampled closed-loop run over stages `0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `theta(0..=N+1)`
    pub modes: Vec<usize>,
    /// `x(0..=N+1)`
    pub states: Vec<Vector>,
    /// `u(0..=N)`
    pub controls: Vec<Vector>,
    /// `x'Q x + u'R u` for stages `0..=N`
    pub stage_costs: Vec<f64>,
    pub terminal_cost: f64,
    pub total_cost: f64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.controls.len() - 1
    }

    /// `max_k |x(k+1) - A x(k) - B u(k)| / (1 + max_k |x(k)|)`.
    pub fn reconstruction_residual(&self, model: &MjlsModel) -> f64 {
        let scale = 1.0 + self.states.iter().map(|x| x.norm()).fold(0.0, f64::max);
        self.controls
            .iter()
            .enumerate()
            .map(|(k, u)| {
                let mode = model.mode(self.modes[k]);
                (&self.states[k + 1] - &mode.a * &self.states[k] - &mode.b * u).norm()
            })
            .fold(0.0, f64::max)
            / scale
    }
}

fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Inverse-CDF draw over `probs`, cumulating in ascending index order.
fn draw(probs: impl Iterator<Item = f64>, rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (j, p) in probs.enumerate() {
        if p > 0.0 {
            cum += p;
            last_positive = j;
            if u < cum {
                return j;
            }
        }
    }
    // rounding left the cumulative sum just below one
    last_positive
}

fn sample_with(transition: &Mat, pi0: &Vector, horizon: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut path = Vec::with_capacity(horizon + 2);
    path.push(draw(pi0.iter().copied(), rng));
    for _ in 0..=horizon {
        let i = *path.last().unwrap();
        path.push(draw(transition.row(i).iter().copied(), rng));
    }
    path
}

/// `theta(0..=horizon+1)` with `theta(0) ~ pi0`, deterministic given `seed`.
pub fn sample_markov_chain(transition: &Mat, pi0: &Vector, horizon: usize, seed: u64) -> Vec<usize> {
    sample_with(transition, pi0, horizon, &mut trial_rng(seed, 0))
}

/// Rolls the model forward along `path` under `u(k) = F_{theta(k)}(k) x(k)`.
/// The horizon is `path.len() - 2`; `terminal[j]` weighs `x(N+1)` in mode `j`.
pub fn simulate_closed_loop(
    model: &MjlsModel,
    policy: &Policy,
    path: &[usize],
    terminal: &[Mat],
) -> Result<Trajectory> {
    if path.len() < 2 {
        return Err(MjlsError::InvalidInput("a mode path needs at least two entries".into()));
    }
    let horizon = path.len() - 2;
    policy.check(model, Some(horizon + 1))?;
    check_path(model, path)?;
    if terminal.len() != model.mode_count() {
        return Err(MjlsError::InvalidInput("one terminal matrix per mode required".into()));
    }
    rollout(model, policy, path, terminal)
}

fn check_path(model: &MjlsModel, path: &[usize]) -> Result<()> {
    if let Some(bad) = path.iter().find(|&&i| i >= model.mode_count()) {
        return Err(MjlsError::InvalidInput(format!("mode index {bad} out of range")));
    }
    Ok(())
}

fn rollout(model: &MjlsModel, policy: &Policy, path: &[usize], terminal: &[Mat]) -> Result<Trajectory> {
    let horizon = path.len() - 2;
    let mut states = Vec::with_capacity(horizon + 2);
    let mut controls = Vec::with_capacity(horizon + 1);
    let mut stage_costs = Vec::with_capacity(horizon + 1);
    states.push(model.x0().clone());
    for k in 0..=horizon {
        let i = path[k];
        let mode = model.mode(i);
        let x = &states[k];
        let u = policy.gain(k, i).expect("policy checked") * x;
        stage_costs.push(quad_form(&mode.q, x) + quad_form(&mode.r, &u));
        let next = &mode.a * x + &mode.b * &u;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(MjlsError::DivergedTrajectory { trial: None, step: k + 1 });
        }
        controls.push(u);
        states.push(next);
    }
    let terminal_cost = quad_form(&terminal[path[horizon + 1]], &states[horizon + 1]);
    let total_cost = stage_costs.iter().sum::<f64>() + terminal_cost;
    if !total_cost.is_finite() {
        return Err(MjlsError::DivergedTrajectory { trial: None, step: horizon + 1 });
    }
    Ok(Trajectory {
        modes: path.to_vec(),
        states,
        controls,
        stage_costs,
        terminal_cost,
        total_cost,
    })
}

/// Trial `index` of a seeded ensemble: its own mode path and rollout.
pub fn simulate_trial(
    model: &MjlsModel,
    policy: &Policy,
    horizon: usize,
    terminal: &[Mat],
    seed: u64,
    index: usize,
) -> Result<Trajectory> {
    let mut rng = trial_rng(seed, index as u64);
    let path = sample_with(model.transition(), model.initial_distribution(), horizon, &mut rng);
    rollout(model, policy, &path, terminal).map_err(|e| match e {
        MjlsError::DivergedTrajectory { step, .. } => MjlsError::DivergedTrajectory {
            trial: Some(index),
            step,
        },
        other => other,
    })
}

fn check_ensemble(model: &MjlsModel, policy: &Policy, horizon: usize, terminal: &[Mat]) -> Result<()> {
    policy.check(model, Some(horizon + 1))?;
    let n = model.state_dim();
    if terminal.len() != model.mode_count() || terminal.iter().any(|p| p.shape() != (n, n)) {
        return Err(MjlsError::InvalidInput("one n x n terminal matrix per mode required".into()));
    }
    Ok(())
}

/// Trajectories for trials `0..trials`, in trial order.
pub fn simulate_trials(
    model: &MjlsModel,
    policy: &Policy,
    trials: usize,
    seed: u64,
    horizon: usize,
    terminal: &[Mat],
) -> Result<Vec<Trajectory>> {
    check_ensemble(model, policy, horizon, terminal)?;
    (0..trials)
        .into_par_iter()
        .map(|t| simulate_trial(model, policy, horizon, terminal, seed, t))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub standard_error: f64,
    pub trials: usize,
}

/// Sample mean and standard error from values in a fixed order. Deviations
/// are taken from the first sample so identical samples give exactly zero
/// spread.
pub fn summarize(values: &[f64]) -> McEstimate {
    let n = values.len();
    if n == 0 {
        return McEstimate { mean: f64::NAN, standard_error: f64::NAN, trials: 0 };
    }
    let shift = values[0];
    let d: Vec<f64> = values.iter().map(|v| v - shift).collect();
    let mean_d = pairwise_sum(&d) / n as f64;
    let sq: Vec<f64> = d.iter().map(|v| (v - mean_d).powi(2)).collect();
    let standard_error = if n > 1 {
        (pairwise_sum(&sq) / (n as f64 - 1.0) / n as f64).sqrt()
    } else {
        f64::NAN
    };
    McEstimate { mean: shift + mean_d, standard_error, trials: n }
}

/// Monte Carlo estimate of the expected cost over `trials >= 2` runs.
pub fn monte_carlo_cost(
    model: &MjlsModel,
    policy: &Policy,
    trials: usize,
    seed: u64,
    horizon: usize,
    terminal: &[Mat],
) -> Result<McEstimate> {
    if trials < 2 {
        return Err(MjlsError::InvalidInput("Monte Carlo needs at least two trials".into()));
    }
    check_ensemble(model, policy, horizon, terminal)?;
    let costs: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| simulate_trial(model, policy, horizon, terminal, seed, t).map(|tr| tr.total_cost))
        .collect::<Result<_>>()?;
    Ok(summarize(&costs))
}
