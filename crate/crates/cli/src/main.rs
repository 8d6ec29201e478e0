use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Time-periodic Markov jump processes: simulation, steady states, rate
/// functionals, reversal identities and contractions.
#[derive(Parser, Debug)]
#[command(name = "pldp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Model file (TOML).
    pub model: PathBuf,
    /// Number of time bins; overrides the model file.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Number of simulated periods.
    #[arg(long, default_value_t = 100)]
    pub periods: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub replicas: usize,
    /// Pass/fail tolerance of the command's check.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the standing assumptions on the tabulated protocol.
    Validate(Common),
    /// Sample paths and write binned empirical quantities.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Initial state label (default: the first state).
        #[arg(long)]
        x0: Option<String>,
    },
    /// Periodic steady state, its flow and the accompanying law.
    Steady(Common),
    /// Evaluate the rate functionals at a pair read from CSV files.
    Rate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mu: PathBuf,
        /// Flow table (`edge,bin,value`).
        #[arg(long, conflicts_with = "current", required_unless_present = "current")]
        flow: Option<PathBuf>,
        /// Current table (`edge,bin,value` over pairs).
        #[arg(long)]
        current: Option<PathBuf>,
    },
    /// Check the reversal identities on random admissible pairs.
    Gc {
        #[command(flatten)]
        common: Common,
        /// uva1, uva2, uva3, luci1, luci2 or all.
        #[arg(long, default_value = "all")]
        relation: String,
    },
    /// Minimize the level-2.5 functional under time-average targets.
    Contract {
        #[command(flatten)]
        common: Common,
        /// Target mean density, comma separated, one entry per state.
        #[arg(long, value_delimiter = ',')]
        mu_target: Option<Vec<f64>>,
        /// Target mean flow, comma separated, one entry per edge.
        #[arg(long, value_delimiter = ',')]
        q_target: Option<Vec<f64>>,
        #[arg(long, default_value_t = 100_000)]
        max_iterations: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Validate(c) => commands::validate(&c),
        Command::Simulate { common, x0 } => commands::simulate(&common, x0.as_deref()),
        Command::Steady(c) => commands::steady(&c),
        Command::Rate { common, mu, flow, current } => commands::rate(&common, &mu, flow.as_deref(), current.as_deref()),
        Command::Gc { common, relation } => commands::gc(&common, &relation),
        Command::Contract { common, mu_target, q_target, max_iterations } => {
            commands::contract(&common, mu_target, q_target, max_iterations)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
