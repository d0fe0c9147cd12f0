//! `exante`: verify, characterize, build, analyze and simulate mechanisms for
//! players with an ex-ante constraint.
//!
//! Exit codes: 0 IC or success, 1 a finding (not IC, disagreement, broken
//! integrability), 2 input error, 3 internal error.

mod commands;
mod report;
mod scenario;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Problems with the user's input; everything else is internal.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

#[derive(Parser)]
#[command(name = "exante", version, about = "Incentive compatibility under ex-ante constraints")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct GlobalOpts {
    /// Feasibility tolerance on the constraint.
    #[arg(long, global = true)]
    pub tol_feas: Option<f64>,
    /// Tolerance for calling the constraint binding.
    #[arg(long, global = true)]
    pub tol_bind: Option<f64>,
    /// Utility gain tolerated before truthful reporting is rejected.
    #[arg(long, global = true)]
    pub tol_ic: Option<f64>,
    /// Margin for strict payoff comparisons.
    #[arg(long, global = true)]
    pub tol_strict: Option<f64>,
    /// Probability mass ignored as measure zero.
    #[arg(long, global = true)]
    pub tol_measure: Option<f64>,
    /// Worker threads; defaults to the available cores. Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Oracle,
    Characterize,
    Surrogate,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Decide incentive compatibility with one or all verifiers.
    Verify {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        mode: Mode,
        /// Also enumerate report maps by brute force (small grids only).
        #[arg(long)]
        exhaustive: bool,
    },
    /// Multiplier characterization with deviation masses.
    Characterize {
        scenario: PathBuf,
        /// CSV of rho_plus / rho_minus at every breakpoint multiplier.
        #[arg(long)]
        rho_out: Option<PathBuf>,
    },
    /// Solve the multiplier for a menu and emit the auto-bidding mechanism.
    Build {
        scenario: PathBuf,
        /// Multiplier at which prices are read off tabulated rules when the scenario has no menu.
        #[arg(long)]
        extract_r: Option<f64>,
        #[arg(long)]
        menu_out: Option<PathBuf>,
        #[arg(long)]
        rules_out: Option<PathBuf>,
    },
    /// Surrogate utility analysis for models linear in the type.
    Surrogate {
        scenario: PathBuf,
        /// Finite-difference step for parametric rules; halved once to estimate the order.
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        field_out: Option<PathBuf>,
    },
    /// Rebuild payments from the allocation by path integration.
    Reconstruct {
        scenario: PathBuf,
        /// Multiplier; defaults to the one chosen by the surrogate analysis.
        #[arg(long)]
        r: Option<f64>,
        #[arg(long, default_value_t = 0)]
        anchor_node: usize,
        /// Surrogate utility at the anchor; defaults to the scenario's own value.
        #[arg(long)]
        anchor_utility: Option<f64>,
        /// Largest path discrepancy accepted as integrable.
        #[arg(long, default_value_t = 1e-6)]
        max_discrepancy: f64,
        #[arg(long)]
        rules_out: Option<PathBuf>,
    },
    /// Run controllers against the scenario's mechanism on common random numbers.
    Simulate {
        scenario: PathBuf,
        episode: PathBuf,
        /// Overrides the episode seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for one trace CSV per controller.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
    },
    /// Cross-check the verifiers on seeded random scenarios.
    Sweep {
        #[arg(long, default_value_t = 200)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Builder fixtures checked for IC and binding.
        #[arg(long, default_value_t = 50)]
        builds: u64,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let input = err
        .chain()
        .any(|e| e.is::<InputError>() || e.is::<exante_core::Error>());
    if input {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    let run = std::panic::catch_unwind(|| commands::dispatch(cli.command, &cli.global));
    match run {
        Ok(Ok(code)) => ExitCode::from(code),
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(3),
    }
}
