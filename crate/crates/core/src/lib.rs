//! Finite- and infinite-horizon quadratic regulation of discrete-time Markov
//! jump linear systems.
//!
//! The crate is organized around a validated [`MjlsModel`]:
//!
//! * [`riccati`] runs the coupled difference Riccati recursion backwards in
//!   time and solves the coupled algebraic Riccati equations by value iteration.
//! * [`stability`] builds the lifted second-moment operator, decides mean-square
//!   stability, exact observability and stabilizability, and propagates exact
//!   second moments.
//! * [`sim`] samples mode paths and closed-loop trajectories for Monte Carlo
//!   cost estimates.
//! * [`oracle`] evaluates costs, costates and optimality conditions by brute
//!   force enumeration of mode paths, independent of the Riccati machinery.
//! * [`export`] reads model files and writes the CSV/JSON artifacts.

// `!(x > tol)` is used on purpose so that NaN fails positivity checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod export;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod riccati;
pub mod sim;
pub mod stability;

pub use error::{MjlsError, NotStabilizableReason, Result};
pub use model::{
    factor_state_weight, mode_average, validate, MjlsModel, Mode, ModelData, Policy,
    ValidationReport,
};
pub use riccati::{
    care_residual, cdre_step, optimal_cost_finite, solve_care, solve_finite, CareOptions,
    CareSolution, CdreStage, FiniteHorizonSolution,
};
