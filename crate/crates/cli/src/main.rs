//! `mjls`: solve, check, simulate and verify Markov jump linear systems from
//! JSON model files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mjls::MjlsError;

#[derive(Parser)]
#[command(name = "mjls", version, about = "Jump linear quadratic regulator toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Backward coupled Riccati recursion over a finite horizon
    SolveFinite(FiniteArgs),
    /// Infinite-horizon fixed point by value iteration
    SolveCare(CareArgs),
    /// Stability, observability and stabilizability report
    Check(CheckArgs),
    /// Monte Carlo closed-loop trajectories under the optimal finite-horizon gains
    Simulate(SimulateArgs),
    /// Brute-force oracle battery against the finite-horizon solution
    Verify(VerifyArgs),
}

#[derive(Args)]
struct Common {
    /// Model file (JSON)
    #[arg(long)]
    model: PathBuf,
    /// Directory for output artifacts
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct HorizonArgs {
    /// Final control stage N
    #[arg(long, default_value_t = 20)]
    horizon: usize,
    /// Terminal weights: `zero`, `identity`, or a JSON file with one matrix per mode
    #[arg(long, default_value = "identity")]
    terminal: String,
}

#[derive(Args)]
struct IterationArgs {
    /// Convergence tolerance on the relative increment
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Value-iteration budget
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
}

#[derive(Args)]
pub struct FiniteArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    horizon: HorizonArgs,
}

#[derive(Args)]
pub struct CareArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    iteration: IterationArgs,
    /// Require observability from every mode, not only those with positive initial probability
    #[arg(long)]
    strict_observability: bool,
}

#[derive(Args)]
pub struct CheckArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    iteration: IterationArgs,
    /// Stationary feedback gains (JSON list, or an object with a `gains` field)
    #[arg(long)]
    gains: Option<PathBuf>,
    #[arg(long)]
    strict_observability: bool,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    horizon: HorizonArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    trials: usize,
}

#[derive(Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    horizon: HorizonArgs,
    /// Seed for the random policies and gain perturbations
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of random gain perturbations
    #[arg(long, default_value_t = 100)]
    perturbations: usize,
}

/// Why a command stopped short of success.
pub enum Failure {
    Solver(MjlsError),
    Io(String),
    Verification(String),
}

impl From<MjlsError> for Failure {
    fn from(e: MjlsError) -> Self {
        Failure::Solver(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Verification(_) => 5,
            Failure::Solver(e) => match e {
                MjlsError::InvalidInput(_)
                | MjlsError::InvalidModel(_)
                | MjlsError::NotPsd { .. }
                | MjlsError::InvalidState(_) => 1,
                MjlsError::RiccatiBreakdown { .. }
                | MjlsError::NumericalFailure(_)
                | MjlsError::DivergedTrajectory { .. } => 2,
                MjlsError::NotStabilizable(_) => 3,
                MjlsError::ObservabilityViolation { .. } | MjlsError::PreconditionFailed(_) => 4,
                MjlsError::TooLarge { .. } => 6,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Solver(e) => e.to_string(),
            Failure::Io(m) | Failure::Verification(m) => m.clone(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::SolveFinite(a) => commands::solve_finite(&a),
        Command::SolveCare(a) => commands::solve_care(&a),
        Command::Check(a) => commands::check(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Verify(a) => commands::verify(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
