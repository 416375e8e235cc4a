//! Problem instances: per-mode system and weight matrices, the mode
//! transition matrix, the initial mode distribution and the initial state.
//!
//! Mode indices are zero-based in the API. The transition convention is
//! `transition[(i, j)] = P(theta(k+1) = j | theta(k) = i)`, so every row sums
//! to one.

use std::fmt;

use nalgebra::SymmetricEigen;
use serde::Serialize;

use crate::error::{MjlsError, Result};
use crate::linalg::{all_finite, asymmetry, min_eigenvalue, sym_norm2, symmetrize, Mat, Vector};

/// Row sums of the transition matrix and the initial distribution.
pub const PROBABILITY_TOL: f64 = 1e-12;
/// Symmetry of Q and R, absolute.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Relative PSD slack: min eigenvalue must be at least `-PSD_TOL * ||M||_2`.
pub const PSD_TOL: f64 = 1e-10;
/// Relative tolerance of `||C'C - Q||_F` against `1 + ||Q||_F`.
pub const FACTOR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    pub a: Mat,
    pub b: Mat,
    pub q: Mat,
    pub r: Mat,
    /// Optional output matrix with `Q = C'C`.
    pub c: Option<Mat>,
}

impl Mode {
    pub fn new(a: Mat, b: Mat, q: Mat, r: Mat) -> Self {
        Self { a, b, q, r, c: None }
    }

    pub fn with_output(mut self, c: Mat) -> Self {
        self.c = Some(c);
        self
    }
}

/// Unvalidated model data, as read from a file or assembled in code.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelData {
    pub modes: Vec<Mode>,
    pub transition: Mat,
    pub initial_distribution: Vector,
    pub x0: Vector,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub subject: String,
    pub passed: bool,
    pub residual: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn violations(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn record(&mut self, name: &str, subject: String, residual: f64, tolerance: f64) {
        // NaN residuals fail
        let passed = residual <= tolerance;
        self.checks.push(Check {
            name: name.to_string(),
            subject,
            passed,
            residual,
            tolerance,
        });
    }

    fn flag(&mut self, name: &str, subject: String, ok: bool) {
        self.record(name, subject, if ok { 0.0 } else { 1.0 }, 0.0);
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for c in self.violations() {
            if !first {
                write!(f, "; ")?;
            }
            first = false;
            write!(
                f,
                "{} violated for {} (residual {:e}, tolerance {:e})",
                c.name, c.subject, c.residual, c.tolerance
            )?;
        }
        if first {
            write!(f, "all {} checks passed", self.checks.len())?;
        }
        Ok(())
    }
}

/// Checks every model invariant and reports each one with its residual.
/// Never aborts; downstream checks that need consistent dimensions are
/// skipped when the dimension check fails.
pub fn validate(data: &ModelData) -> ValidationReport {
    let mut report = ValidationReport::default();
    let l = data.modes.len();
    report.flag("mode-count", "modes".into(), l > 0);
    if l == 0 {
        return report;
    }

    let n = data.modes[0].a.nrows();
    let m = data.modes[0].b.ncols();
    let mut dims_ok = n > 0 && m > 0;
    report.flag("positive-dimensions", format!("n={n}, m={m}"), dims_ok);

    for (i, mode) in data.modes.iter().enumerate() {
        let mut ok = mode.a.shape() == (n, n)
            && mode.b.shape() == (n, m)
            && mode.q.shape() == (n, n)
            && mode.r.shape() == (m, m);
        if let Some(c) = &mode.c {
            ok &= c.ncols() == n;
        }
        report.flag("dimensions", format!("mode {}", i + 1), ok);
        dims_ok &= ok;
    }
    let chain_ok = data.transition.shape() == (l, l) && data.initial_distribution.len() == l;
    report.flag("dimensions", "transition/initial distribution".into(), chain_ok);
    let x0_ok = data.x0.len() == n;
    report.flag("dimensions", "x0".into(), x0_ok);
    dims_ok &= chain_ok && x0_ok;

    let finite = data.modes.iter().all(|md| {
        all_finite(&md.a)
            && all_finite(&md.b)
            && all_finite(&md.q)
            && all_finite(&md.r)
            && md.c.as_ref().is_none_or(all_finite)
    }) && all_finite(&data.transition)
        && data.initial_distribution.iter().all(|v| v.is_finite())
        && data.x0.iter().all(|v| v.is_finite());
    report.flag("finite", "all entries".into(), finite);

    if !dims_ok || !finite {
        return report;
    }

    for i in 0..l {
        let row = data.transition.row(i);
        report.record(
            "row-stochastic",
            format!("transition row {}", i + 1),
            (row.sum() - 1.0).abs(),
            PROBABILITY_TOL,
        );
        report.record(
            "nonnegative",
            format!("transition row {}", i + 1),
            (-row.min()).max(0.0),
            0.0,
        );
    }
    report.record(
        "distribution",
        "initial distribution".into(),
        (data.initial_distribution.sum() - 1.0).abs(),
        PROBABILITY_TOL,
    );
    report.record(
        "nonnegative",
        "initial distribution".into(),
        (-data.initial_distribution.min()).max(0.0),
        0.0,
    );

    for (i, mode) in data.modes.iter().enumerate() {
        for (label, w) in [("Q", &mode.q), ("R", &mode.r)] {
            report.record(
                "symmetric",
                format!("{label} of mode {}", i + 1),
                asymmetry(w),
                SYMMETRY_TOL,
            );
            let min_eig = min_eigenvalue(w);
            report.record(
                "psd",
                format!("{label} of mode {}", i + 1),
                (-min_eig).max(0.0),
                PSD_TOL * sym_norm2(w),
            );
        }
        if let Some(c) = &mode.c {
            let gap = (c.transpose() * c - &mode.q).norm();
            report.record(
                "output-factor",
                format!("C of mode {}", i + 1),
                gap,
                FACTOR_TOL * (1.0 + mode.q.norm()),
            );
        }
    }
    report
}

/// A validated problem instance. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct MjlsModel {
    data: ModelData,
}

impl MjlsModel {
    pub fn new(data: ModelData) -> Result<Self> {
        let report = validate(&data);
        if !report.passed() {
            return Err(MjlsError::InvalidModel(report));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &ModelData {
        &self.data
    }

    pub fn into_data(self) -> ModelData {
        self.data
    }

    pub fn modes(&self) -> &[Mode] {
        &self.data.modes
    }

    pub fn mode(&self, i: usize) -> &Mode {
        &self.data.modes[i]
    }

    pub fn transition(&self) -> &Mat {
        &self.data.transition
    }

    pub fn lambda(&self, i: usize, j: usize) -> f64 {
        self.data.transition[(i, j)]
    }

    pub fn initial_distribution(&self) -> &Vector {
        &self.data.initial_distribution
    }

    pub fn x0(&self) -> &Vector {
        &self.data.x0
    }

    pub fn mode_count(&self) -> usize {
        self.data.modes.len()
    }

    pub fn state_dim(&self) -> usize {
        self.data.modes[0].a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.data.modes[0].b.ncols()
    }

    pub fn with_x0(&self, x0: Vector) -> Result<Self> {
        let mut data = self.data.clone();
        data.x0 = x0;
        Self::new(data)
    }

    pub fn with_initial_distribution(&self, pi0: Vector) -> Result<Self> {
        let mut data = self.data.clone();
        data.initial_distribution = pi0;
        Self::new(data)
    }

    /// Output matrix of mode `i`: the supplied `C`, or a factor of `Q`.
    pub fn output_matrix(&self, i: usize) -> Result<Mat> {
        let mode = self.mode(i);
        match &mode.c {
            Some(c) => Ok(c.clone()),
            None => factor_state_weight(&mode.q),
        }
    }

    /// Mode average of per-mode matrices as seen from mode `i`.
    pub fn mode_average(&self, p: &[Mat], i: usize) -> Result<Mat> {
        mode_average(p, i, &self.data.transition)
    }

    /// `L` copies of an `n x n` matrix.
    pub fn uniform_terminal(&self, p: &Mat) -> Vec<Mat> {
        vec![p.clone(); self.mode_count()]
    }

    pub fn zero_terminal(&self) -> Vec<Mat> {
        let n = self.state_dim();
        self.uniform_terminal(&Mat::zeros(n, n))
    }

    pub fn identity_terminal(&self) -> Vec<Mat> {
        let n = self.state_dim();
        self.uniform_terminal(&Mat::identity(n, n))
    }
}

/// `sum_j lambda[i][j] * P_j`, explicitly symmetrized.
pub fn mode_average(p: &[Mat], i: usize, transition: &Mat) -> Result<Mat> {
    let l = transition.nrows();
    if transition.ncols() != l || p.len() != l {
        return Err(MjlsError::InvalidInput(format!(
            "mode average needs {l} matrices and a square transition matrix, got {} matrices and {}x{}",
            p.len(),
            transition.nrows(),
            transition.ncols()
        )));
    }
    if i >= l {
        return Err(MjlsError::InvalidInput(format!("mode index {i} out of range for {l} modes")));
    }
    let shape = p[0].shape();
    if shape.0 != shape.1 || p.iter().any(|pj| pj.shape() != shape) {
        return Err(MjlsError::InvalidInput(
            "mode average needs square matrices of one common size".into(),
        ));
    }
    let mut acc = Mat::zeros(shape.0, shape.1);
    for (j, pj) in p.iter().enumerate() {
        let w = transition[(i, j)];
        if w != 0.0 {
            acc += pj * w;
        }
    }
    Ok(symmetrize(&acc))
}

/// Returns `C` with `C'C = Q` from a clamped symmetric eigendecomposition.
pub fn factor_state_weight(q: &Mat) -> Result<Mat> {
    if q.nrows() != q.ncols() {
        return Err(MjlsError::InvalidInput(format!(
            "state weight must be square, got {}x{}",
            q.nrows(),
            q.ncols()
        )));
    }
    let eig = SymmetricEigen::new(symmetrize(q));
    let scale = eig.eigenvalues.amax();
    let min_eig = eig.eigenvalues.min();
    if min_eig < -PSD_TOL * scale {
        return Err(MjlsError::NotPsd { min_eigenvalue: min_eig });
    }
    // Q = V D V' = (D^1/2 V')' (D^1/2 V')
    let roots = eig.eigenvalues.map(|d| d.max(0.0).sqrt());
    let mut c = eig.eigenvectors.transpose();
    for (row, root) in roots.iter().enumerate() {
        c.row_mut(row).scale_mut(*root);
    }
    Ok(c)
}

/// Mode-indexed linear state feedback `u(k) = F x(k)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    /// One gain per mode, used at every stage.
    Stationary(Vec<Mat>),
    /// `gains[k][i]` for stage `k` and mode `i`.
    Staged(Vec<Vec<Mat>>),
}

impl Policy {
    pub fn zero(model: &MjlsModel) -> Self {
        let (n, m) = (model.state_dim(), model.input_dim());
        Policy::Stationary(vec![Mat::zeros(m, n); model.mode_count()])
    }

    /// Gain for stage `k` in mode `i`; staged policies return `None` past
    /// their last stage.
    pub fn gain(&self, k: usize, i: usize) -> Option<&Mat> {
        match self {
            Policy::Stationary(g) => g.get(i),
            Policy::Staged(g) => g.get(k).and_then(|s| s.get(i)),
        }
    }

    /// Number of stages covered, `None` for stationary gains.
    pub fn stages(&self) -> Option<usize> {
        match self {
            Policy::Stationary(_) => None,
            Policy::Staged(g) => Some(g.len()),
        }
    }

    /// Checks gain shapes against the model and, when `stages` is given,
    /// that a staged policy covers stages `0..stages`.
    pub fn check(&self, model: &MjlsModel, stages: Option<usize>) -> Result<()> {
        let (n, m, l) = (model.state_dim(), model.input_dim(), model.mode_count());
        let check_set = |set: &[Mat]| -> Result<()> {
            if set.len() != l {
                return Err(MjlsError::InvalidInput(format!(
                    "policy has {} gains per stage, model has {l} modes",
                    set.len()
                )));
            }
            for g in set {
                if g.shape() != (m, n) {
                    return Err(MjlsError::InvalidInput(format!(
                        "gain is {}x{}, expected {m}x{n}",
                        g.nrows(),
                        g.ncols()
                    )));
                }
                if !all_finite(g) {
                    return Err(MjlsError::InvalidInput("gain has non-finite entries".into()));
                }
            }
            Ok(())
        };
        match self {
            Policy::Stationary(g) => check_set(g),
            Policy::Staged(g) => {
                if let Some(needed) = stages {
                    if g.len() < needed {
                        return Err(MjlsError::InvalidInput(format!(
                            "staged policy covers {} stages, {needed} needed",
                            g.len()
                        )));
                    }
                }
                g.iter().try_for_each(|s| check_set(s))
            }
        }
    }
}
