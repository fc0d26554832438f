//! `bisweep`: solve, ensemble, oracle and validate commands.
//!
//! Exit codes: 0 success, 1 failed validation, 2 no convergence or
//! divergence, 3 configuration error, 4 numerical error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "bisweep", version, about = "Iterative sweep solver for bilinear optimal control")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Args, Clone)]
pub struct RunArgs {
    /// JSON problem config.
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Time intervals (single) or control knots (ensemble).
    #[arg(long)]
    pub n_t: Option<usize>,
    /// Terminal-error stopping tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Exponential weight of the iterate-difference norms.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Freeze rule (extremal | symmetric | picard) or ensemble mode
    /// (picard | costate).
    #[arg(long)]
    pub mode: Option<String>,
    /// Truncation residual of the ensemble synthesis.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Relative singular-value cutoff of the ensemble synthesis.
    #[arg(long)]
    pub rcond: Option<f64>,
    /// Design samples per parameter axis.
    #[arg(long)]
    pub n_beta: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Solve a single-system problem.
    Solve(RunArgs),
    /// Synthesize an ensemble control.
    Ensemble(RunArgs),
    /// Run the shooting oracle and compare with a previous solve in --out.
    Oracle {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        n_t: Option<usize>,
    },
    /// Run the invariant suites.
    Validate {
        /// all | model | sweep | solver | ensemble | oracle
        #[arg(long, default_value = "all")]
        scope: String,
        /// Seed of the randomized fixtures.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { commands::EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.cmd {
        Cmd::Solve(a) => commands::solve(&a),
        Cmd::Ensemble(a) => commands::ensemble(&a),
        Cmd::Oracle { config, out, n_t } => commands::oracle(&config, &out, n_t),
        Cmd::Validate { scope, seed } => commands::validate(&scope, seed),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(fail) => {
            eprintln!("error: {:#}", fail.err);
            ExitCode::from(fail.code)
        }
    }
}
