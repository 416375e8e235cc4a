//! Coupled Riccati recursions.
//!
//! One backward stage maps the next-stage matrices `P_j(k+1)` to
//!
//! ```text
//! S_i       = sum_j lambda_ij P_j(k+1)
//! Upsilon_i = B_i' S_i B_i + R_i
//! M_i       = B_i' S_i A_i
//! P_i(k)    = A_i' S_i A_i + Q_i - M_i' Upsilon_i^{-1} M_i
//! K_i(k)    = -Upsilon_i^{-1} M_i
//! ```
//!
//! The stage is well defined only when every `Upsilon_i` is positive definite;
//! otherwise the recursion breaks down and no unique optimal control exists.
//! The infinite-horizon equations are solved by value iteration: the stage map
//! is applied repeatedly from a zero terminal condition until it settles.

use serde::Serialize;

use crate::error::{MjlsError, NotStabilizableReason, Result};
use crate::linalg::{
    asymmetry, min_eigenvalue, pd_threshold, quad_form, spd_factor, symmetrize, Mat,
};
use crate::model::{MjlsModel, Policy, PSD_TOL, SYMMETRY_TOL};

/// Relative positive-definiteness margin for Upsilon and for P certificates.
pub const DEFAULT_PD_TOL: f64 = 1e-10;

/// Output of one backward stage, indexed by mode.
#[derive(Debug, Clone, PartialEq)]
pub struct CdreStage {
    pub p: Vec<Mat>,
    pub upsilon: Vec<Mat>,
    pub m: Vec<Mat>,
    pub gain: Vec<Mat>,
    pub upsilon_min_eigenvalue: Vec<f64>,
}

/// One backward stage with the default positive-definiteness margin.
pub fn cdre_step(p_next: &[Mat], model: &MjlsModel) -> Result<CdreStage> {
    stage_map(p_next, model, DEFAULT_PD_TOL, None)
}

pub(crate) fn stage_map(
    p_next: &[Mat],
    model: &MjlsModel,
    pd_tol: f64,
    stage: Option<usize>,
) -> Result<CdreStage> {
    let l = model.mode_count();
    let n = model.state_dim();
    if p_next.len() != l || p_next.iter().any(|p| p.shape() != (n, n)) {
        return Err(MjlsError::InvalidInput(format!(
            "expected {l} matrices of size {n}x{n}"
        )));
    }
    let mut out = CdreStage {
        p: Vec::with_capacity(l),
        upsilon: Vec::with_capacity(l),
        m: Vec::with_capacity(l),
        gain: Vec::with_capacity(l),
        upsilon_min_eigenvalue: Vec::with_capacity(l),
    };
    for (i, mode) in model.modes().iter().enumerate() {
        let s = model.mode_average(p_next, i)?;
        let bt_s = mode.b.transpose() * &s;
        let upsilon = symmetrize(&(&bt_s * &mode.b + &mode.r));
        let m = &bt_s * &mode.a;
        let min_eig = min_eigenvalue(&upsilon);
        if !(min_eig > pd_threshold(&upsilon, pd_tol)) {
            return Err(MjlsError::RiccatiBreakdown {
                stage,
                mode: i,
                min_eigenvalue: min_eig,
            });
        }
        let chol = spd_factor(&upsilon).ok_or(MjlsError::RiccatiBreakdown {
            stage,
            mode: i,
            min_eigenvalue: min_eig,
        })?;
        // Upsilon^{-1} M via the Cholesky factor
        let ups_inv_m = chol.solve(&m);
        let p = mode.a.transpose() * &s * &mode.a + &mode.q - m.transpose() * &ups_inv_m;
        out.p.push(symmetrize(&p));
        out.gain.push(-ups_inv_m);
        out.upsilon.push(upsilon);
        out.m.push(m);
        out.upsilon_min_eigenvalue.push(min_eig);
    }
    Ok(out)
}

fn check_terminal(model: &MjlsModel, terminal: &[Mat]) -> Result<()> {
    let (l, n) = (model.mode_count(), model.state_dim());
    if terminal.len() != l {
        return Err(MjlsError::InvalidInput(format!(
            "{} terminal matrices given, model has {l} modes",
            terminal.len()
        )));
    }
    for (j, p) in terminal.iter().enumerate() {
        if p.shape() != (n, n) {
            return Err(MjlsError::InvalidInput(format!(
                "terminal matrix of mode {} is {}x{}, expected {n}x{n}",
                j + 1,
                p.nrows(),
                p.ncols()
            )));
        }
        if !p.iter().all(|v| v.is_finite()) || asymmetry(p) > SYMMETRY_TOL {
            return Err(MjlsError::InvalidInput(format!(
                "terminal matrix of mode {} is not a finite symmetric matrix",
                j + 1
            )));
        }
        let min_eig = min_eigenvalue(p);
        if min_eig < -PSD_TOL * crate::linalg::sym_norm2(p) {
            return Err(MjlsError::NotPsd { min_eigenvalue: min_eig });
        }
    }
    Ok(())
}

/// Backward solution of the coupled difference Riccati equations over
/// stages `0..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteHorizonSolution {
    horizon: usize,
    terminal: Vec<Mat>,
    /// Stages `first_stage..=horizon`; `first_stage == 0` when solvable.
    stages: Vec<CdreStage>,
    first_stage: usize,
    breakdown: Option<MjlsError>,
}

impl FiniteHorizonSolution {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn solvable(&self) -> bool {
        self.breakdown.is_none()
    }

    /// The breakdown that stopped the recursion, if any.
    pub fn breakdown(&self) -> Option<&MjlsError> {
        self.breakdown.as_ref()
    }

    /// Terminal matrices `P_j(N+1)`.
    pub fn terminal(&self) -> &[Mat] {
        &self.terminal
    }

    pub fn stage(&self, k: usize) -> Option<&CdreStage> {
        if k < self.first_stage || k > self.horizon {
            return None;
        }
        self.stages.get(k - self.first_stage)
    }

    /// `P_i(k)` for all modes; `k = horizon + 1` gives the terminal matrices.
    pub fn p(&self, k: usize) -> Option<&[Mat]> {
        if k == self.horizon + 1 {
            return Some(&self.terminal);
        }
        self.stage(k).map(|s| s.p.as_slice())
    }

    /// Staged optimal feedback `u(k) = K_{theta(k)}(k) x(k)`.
    pub fn policy(&self) -> Result<Policy> {
        self.ensure_solvable()?;
        Ok(Policy::Staged(
            self.stages.iter().map(|s| s.gain.clone()).collect(),
        ))
    }

    pub fn stages(&self) -> &[CdreStage] {
        &self.stages
    }

    pub(crate) fn ensure_solvable(&self) -> Result<()> {
        match &self.breakdown {
            None => Ok(()),
            Some(e) => Err(MjlsError::InvalidState(format!(
                "finite-horizon solution is not solvable: {e}"
            ))),
        }
    }
}

/// Runs the backward recursion without aborting: a breakdown is recorded in
/// the returned solution, which then holds only the stages after it.
pub fn solve_finite_report(
    model: &MjlsModel,
    terminal: &[Mat],
    horizon: usize,
    pd_tol: f64,
) -> Result<FiniteHorizonSolution> {
    check_terminal(model, terminal)?;
    let terminal: Vec<Mat> = terminal.iter().map(symmetrize).collect();
    let mut rev: Vec<CdreStage> = Vec::with_capacity(horizon + 1);
    let mut breakdown = None;
    for k in (0..=horizon).rev() {
        let next = rev.last().map_or(terminal.as_slice(), |s| s.p.as_slice());
        match stage_map(next, model, pd_tol, Some(k)) {
            Ok(stage) => rev.push(stage),
            Err(e @ MjlsError::RiccatiBreakdown { .. }) => {
                breakdown = Some(e);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    rev.reverse();
    let first_stage = horizon + 1 - rev.len();
    Ok(FiniteHorizonSolution {
        horizon,
        terminal,
        stages: rev,
        first_stage,
        breakdown,
    })
}

/// Backward recursion from `terminal` at stage `horizon + 1` down to stage 0.
pub fn solve_finite(
    model: &MjlsModel,
    terminal: &[Mat],
    horizon: usize,
) -> Result<FiniteHorizonSolution> {
    let sol = solve_finite_report(model, terminal, horizon, DEFAULT_PD_TOL)?;
    match sol.breakdown {
        Some(e) => Err(e),
        None => Ok(sol),
    }
}

/// `E[x(0)' P_{theta(0)}(0) x(0)]`, the optimal finite-horizon cost.
pub fn optimal_cost_finite(sol: &FiniteHorizonSolution, model: &MjlsModel) -> Result<f64> {
    sol.ensure_solvable()?;
    let p0 = sol
        .p(0)
        .ok_or_else(|| MjlsError::InvalidState("solution has no stage 0".into()))?;
    Ok(expected_quadratic(model, p0))
}

/// `sum_i pi0_i x0' P_i x0`
pub fn expected_quadratic(model: &MjlsModel, p: &[Mat]) -> f64 {
    let x0 = model.x0();
    model
        .initial_distribution()
        .iter()
        .zip(p)
        .map(|(w, pi)| if *w == 0.0 { 0.0 } else { w * quad_form(pi, x0) })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CareOptions {
    /// Stop when `max_i ||P_i^{t+1} - P_i^t||_F / (1 + ||P_i^t||_F)` drops to this.
    pub tol: f64,
    pub residual_tol: f64,
    pub max_iter: usize,
    /// Any `trace(P_i)` above this is treated as divergence.
    pub divergence_bound: f64,
    pub pd_tol: f64,
}

impl Default for CareOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            residual_tol: 1e-8,
            max_iter: 10_000,
            divergence_bound: 1e12,
            pd_tol: DEFAULT_PD_TOL,
        }
    }
}

/// Fixed point of the coupled algebraic Riccati equations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CareSolution {
    #[serde(skip)]
    pub p: Vec<Mat>,
    #[serde(skip)]
    pub upsilon: Vec<Mat>,
    #[serde(skip)]
    pub m: Vec<Mat>,
    #[serde(skip)]
    pub gain: Vec<Mat>,
    pub iterations: usize,
    pub final_increment: f64,
    pub residual: f64,
    /// Smallest eigenvalue of each `P_i`; all positive on success.
    pub min_eigenvalues: Vec<f64>,
}

impl CareSolution {
    pub fn policy(&self) -> Policy {
        Policy::Stationary(self.gain.clone())
    }

    /// Optimal infinite-horizon cost `E[x0' P_{theta(0)} x0]`.
    pub fn optimal_cost(&self, model: &MjlsModel) -> f64 {
        expected_quadratic(model, &self.p)
    }
}

/// Value iteration from the zero terminal condition. Requires every `R_i`
/// positive definite.
pub fn solve_care(model: &MjlsModel, opts: &CareOptions) -> Result<CareSolution> {
    for (i, mode) in model.modes().iter().enumerate() {
        let min_eig = min_eigenvalue(&mode.r);
        if !(min_eig > pd_threshold(&mode.r, opts.pd_tol)) {
            return Err(MjlsError::PreconditionFailed(format!(
                "R of mode {} is not positive definite (min eigenvalue {min_eig:e})",
                i + 1
            )));
        }
    }
    value_iteration(model, &model.zero_terminal(), opts)
}

/// Repeated backward stages from `initial` until the increment criterion
/// holds. The fixed point is then checked against the CARE residual and
/// certified positive definite.
pub fn value_iteration(
    model: &MjlsModel,
    initial: &[Mat],
    opts: &CareOptions,
) -> Result<CareSolution> {
    check_terminal(model, initial)?;
    let mut p: Vec<Mat> = initial.iter().map(symmetrize).collect();
    let mut increment = f64::INFINITY;
    for iteration in 1..=opts.max_iter {
        let stage = stage_map(&p, model, opts.pd_tol, None)?;
        for pi in &stage.p {
            let trace = pi.trace();
            if !trace.is_finite() || trace > opts.divergence_bound {
                return Err(MjlsError::NotStabilizable(NotStabilizableReason::Diverged {
                    iteration,
                    trace,
                }));
            }
        }
        increment = stage
            .p
            .iter()
            .zip(&p)
            .map(|(new, old)| (new - old).norm() / (1.0 + old.norm()))
            .fold(0.0, f64::max);
        p = stage.p;
        if increment <= opts.tol {
            return certify(model, p, iteration, increment, opts);
        }
    }
    Err(MjlsError::NotStabilizable(
        NotStabilizableReason::BudgetExhausted {
            iterations: opts.max_iter,
            increment,
        },
    ))
}

fn certify(
    model: &MjlsModel,
    p: Vec<Mat>,
    iterations: usize,
    final_increment: f64,
    opts: &CareOptions,
) -> Result<CareSolution> {
    let at_fixed_point = stage_map(&p, model, opts.pd_tol, None)?;
    let residual = residual_from_stage(&p, &at_fixed_point);
    if !(residual <= opts.residual_tol) {
        return Err(MjlsError::NumericalFailure(format!(
            "value iteration stalled with CARE residual {residual:e} above {:e}",
            opts.residual_tol
        )));
    }
    let min_eigenvalues: Vec<f64> = p.iter().map(min_eigenvalue).collect();
    for (i, (pi, &min_eig)) in p.iter().zip(&min_eigenvalues).enumerate() {
        if !(min_eig > pd_threshold(pi, opts.pd_tol)) {
            return Err(MjlsError::ObservabilityViolation {
                mode: i,
                min_eigenvalue: min_eig,
            });
        }
    }
    Ok(CareSolution {
        upsilon: at_fixed_point.upsilon,
        m: at_fixed_point.m,
        gain: at_fixed_point.gain,
        p,
        iterations,
        final_increment,
        residual,
        min_eigenvalues,
    })
}

fn residual_from_stage(p: &[Mat], image: &CdreStage) -> f64 {
    image
        .p
        .iter()
        .zip(p)
        .map(|(rhs, pi)| (rhs - pi).norm() / (1.0 + pi.norm()))
        .fold(0.0, f64::max)
}

/// Normalized CARE residual `max_i ||RHS_i(P) - P_i||_F / (1 + ||P_i||_F)`.
pub fn care_residual(p: &[Mat], model: &MjlsModel) -> Result<f64> {
    let image = stage_map(p, model, DEFAULT_PD_TOL, None)?;
    Ok(residual_from_stage(p, &image))
}
