//! Mean-square stability, exact observability and stabilizability.
//!
//! Mean-square stability is decided on the lifted second-moment operator.
//! With `X_i(k) = E[x(k) x(k)' 1{theta(k) = i}]` and closed-loop matrices
//! `Abar_i = A_i + B_i F_i`, the moments evolve linearly:
//!
//! ```text
//! X_j(k+1) = sum_i lambda_ij Abar_i X_i(k) Abar_i'
//! ```
//!
//! so `E|x(k)|^2 = sum_i tr X_i(k)` tends to zero for every initial condition
//! exactly when the spectral radius of that map is below one.

use nalgebra::Schur;
use serde::Serialize;

use crate::error::{MjlsError, Result};
use crate::linalg::{min_eigenvalue, pd_threshold, Mat, Vector};
use crate::model::{MjlsModel, Policy};
use crate::riccati::{solve_care, CareOptions, DEFAULT_PD_TOL};

/// Strict margin below one for the MSS verdict.
pub const MSS_MARGIN: f64 = 1e-9;
/// Relative eigen-residual tolerance used for MSS radii.
pub const RADIUS_TOL: f64 = 1e-12;
const POWER_ITERATION_CAP: usize = 20_000;

fn closed_loop_matrices(model: &MjlsModel, gains: Option<&[Mat]>) -> Result<Vec<Mat>> {
    match gains {
        None => Ok(model.modes().iter().map(|m| m.a.clone()).collect()),
        Some(g) => {
            Policy::Stationary(g.to_vec()).check(model, None)?;
            Ok(model
                .modes()
                .iter()
                .zip(g)
                .map(|(mode, f)| &mode.a + &mode.b * f)
                .collect())
        }
    }
}

/// Lifted operator on stacked column-major `vec(X_i)`. Block `(j, i)` is
/// `lambda_ij (Abar_i kron Abar_i)`.
pub fn closed_loop_operator(model: &MjlsModel, gains: Option<&[Mat]>) -> Result<Mat> {
    let abar = closed_loop_matrices(model, gains)?;
    let n2 = model.state_dim().pow(2);
    let l = model.mode_count();
    let mut t = Mat::zeros(l * n2, l * n2);
    for (i, a) in abar.iter().enumerate() {
        let kron = a.kronecker(a);
        for j in 0..l {
            let w = model.lambda(i, j);
            if w != 0.0 {
                t.view_mut((j * n2, i * n2), (n2, n2)).copy_from(&(&kron * w));
            }
        }
    }
    Ok(t)
}

/// Largest eigenvalue modulus. Power iteration first; if the eigen-residual
/// does not reach `tol * (1 + ||T||_F)` within the iteration cap (complex or
/// tied dominant eigenvalues), fall back to a real Schur decomposition.
pub fn spectral_radius(t: &Mat, tol: f64) -> Result<f64> {
    if t.nrows() != t.ncols() {
        return Err(MjlsError::InvalidInput(format!(
            "spectral radius of a {}x{} matrix",
            t.nrows(),
            t.ncols()
        )));
    }
    if !t.iter().all(|v| v.is_finite()) {
        return Err(MjlsError::InvalidInput("matrix has non-finite entries".into()));
    }
    let dim = t.nrows();
    let scale = t.norm();
    if dim == 0 || scale == 0.0 {
        return Ok(0.0);
    }
    let threshold = tol * (1.0 + scale);

    let golden = 0.618_033_988_749_895;
    let mut v = Vector::from_fn(dim, |i, _| 1.0 + 0.5 * ((i as f64 + 1.0) * golden).fract());
    v /= v.norm();
    for _ in 0..POWER_ITERATION_CAP {
        let w = t * &v;
        let w_norm = w.norm();
        if w_norm == 0.0 {
            break;
        }
        let mu = v.dot(&w);
        if (&w - &v * mu).norm() <= threshold {
            return Ok(mu.abs());
        }
        v = w / w_norm;
    }

    let schur = Schur::try_new(t.clone(), f64::EPSILON, 10_000).ok_or_else(|| {
        MjlsError::NumericalFailure("eigenvalue iteration did not converge".into())
    })?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MssVerdict {
    pub stable: bool,
    pub spectral_radius: f64,
}

/// Mean-square stability of the open loop (`gains = None`) or of
/// `u = F_{theta(k)} x`.
pub fn is_mss(model: &MjlsModel, gains: Option<&[Mat]>) -> Result<MssVerdict> {
    let t = closed_loop_operator(model, gains)?;
    let radius = spectral_radius(&t, RADIUS_TOL)?;
    Ok(MssVerdict {
        stable: radius < 1.0 - MSS_MARGIN,
        spectral_radius: radius,
    })
}

/// Exact per-mode second moments of the closed loop.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondMomentChain {
    /// `x[k][i] = E[x(k) x(k)' 1{theta(k) = i}]`
    pub x: Vec<Vec<Mat>>,
    /// `mode_mass[k][i] = P(theta(k) = i)`
    pub mode_mass: Vec<Vector>,
}

impl SecondMomentChain {
    /// Number of propagated steps; moments exist for `k = 0..=steps`.
    pub fn steps(&self) -> usize {
        self.x.len() - 1
    }

    pub fn traces(&self, k: usize) -> Vec<f64> {
        self.x[k].iter().map(Mat::trace).collect()
    }

    /// `E|x(k)|^2`
    pub fn total(&self, k: usize) -> f64 {
        self.x[k].iter().map(Mat::trace).sum()
    }
}

/// Propagates `X_i(k)` for `k = 0..=steps`. A staged policy must cover
/// stages `0..steps`.
pub fn propagate_second_moment(
    model: &MjlsModel,
    policy: Option<&Policy>,
    steps: usize,
) -> Result<SecondMomentChain> {
    if let Some(p) = policy {
        p.check(model, Some(steps))?;
    }
    let l = model.mode_count();
    let x0 = model.x0();
    let outer = x0 * x0.transpose();
    let pi0 = model.initial_distribution().clone();
    let mut x = Vec::with_capacity(steps + 1);
    let mut mass = Vec::with_capacity(steps + 1);
    x.push(pi0.iter().map(|w| &outer * *w).collect::<Vec<Mat>>());
    mass.push(pi0);
    let lambda_t = model.transition().transpose();
    for k in 0..steps {
        let cur: &Vec<Mat> = x.last().unwrap();
        let mut next = vec![Mat::zeros(outer.nrows(), outer.ncols()); l];
        for (i, (mode, xi)) in model.modes().iter().zip(cur).enumerate() {
            let abar = match policy {
                None => mode.a.clone(),
                Some(p) => &mode.a + &mode.b * p.gain(k, i).expect("policy checked"),
            };
            let moved = &abar * xi * abar.transpose();
            for (j, nj) in next.iter_mut().enumerate() {
                let w = model.lambda(i, j);
                if w != 0.0 {
                    *nj += &moved * w;
                }
            }
        }
        for nj in next.iter_mut() {
            *nj = crate::linalg::symmetrize(nj);
        }
        x.push(next);
        let m = &lambda_t * mass.last().unwrap();
        mass.push(m);
    }
    Ok(SecondMomentChain { x, mode_mass: mass })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservabilityOptions {
    /// Test every mode, not only those with positive initial probability.
    pub strict: bool,
    /// Gramian horizon; `None` means `n * L`.
    pub horizon: Option<usize>,
    pub pd_tol: f64,
}

impl Default for ObservabilityOptions {
    fn default() -> Self {
        Self {
            strict: false,
            horizon: None,
            pd_tol: DEFAULT_PD_TOL,
        }
    }
}

/// Output-energy Gramians `G_i(t)` for `t = 0..=horizon`:
/// `G_i(0) = C_i'C_i`, `G_i(t) = C_i'C_i + A_i' (sum_j lambda_ij G_j(t-1)) A_i`.
pub fn observability_gramians(model: &MjlsModel, horizon: usize) -> Result<Vec<Vec<Mat>>> {
    let base: Vec<Mat> = (0..model.mode_count())
        .map(|i| model.output_matrix(i).map(|c| c.transpose() * c))
        .collect::<Result<_>>()?;
    let mut out = vec![base.clone()];
    for _ in 0..horizon {
        let prev = out.last().unwrap();
        let next: Vec<Mat> = model
            .modes()
            .iter()
            .enumerate()
            .map(|(i, mode)| {
                let avg = model.mode_average(prev, i)?;
                Ok(&base[i] + mode.a.transpose() * avg * &mode.a)
            })
            .collect::<Result<_>>()?;
        out.push(next);
    }
    Ok(out)
}

/// Zero output almost surely forces `x0 = 0` exactly when the horizon
/// Gramian of every tested mode is positive definite.
pub fn is_exactly_observable(model: &MjlsModel, opts: &ObservabilityOptions) -> Result<bool> {
    let horizon = opts
        .horizon
        .unwrap_or(model.state_dim() * model.mode_count());
    let gramians = observability_gramians(model, horizon)?;
    let last = gramians.last().unwrap();
    let pi0 = model.initial_distribution();
    Ok(last.iter().enumerate().all(|(i, g)| {
        (!opts.strict && pi0[i] == 0.0) || min_eigenvalue(g) > pd_threshold(g, opts.pd_tol)
    }))
}

/// Mean-square stabilizability via positivity of the value-iteration fixed
/// point. Requires positive definite `R_i` and exact observability; without
/// them the equivalence does not hold and `PreconditionFailed` is returned.
pub fn is_stabilizable(
    model: &MjlsModel,
    care: &CareOptions,
    observability: &ObservabilityOptions,
) -> Result<bool> {
    for (i, mode) in model.modes().iter().enumerate() {
        let min_eig = min_eigenvalue(&mode.r);
        if !(min_eig > pd_threshold(&mode.r, care.pd_tol)) {
            return Err(MjlsError::PreconditionFailed(format!(
                "R of mode {} is not positive definite",
                i + 1
            )));
        }
    }
    if !is_exactly_observable(model, observability)? {
        return Err(MjlsError::PreconditionFailed(
            "(C, A) is not exactly observable".into(),
        ));
    }
    match solve_care(model, care) {
        Ok(_) => Ok(true),
        Err(MjlsError::NotStabilizable(_)) | Err(MjlsError::ObservabilityViolation { .. }) => {
            Ok(false)
        }
        Err(e) => Err(e),
    }
}
