use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedsim::aggregation::Strategy;
use fedsim::attack::AttackKind;
use fedsim_cli::{
    cmd_compare, cmd_run, cmd_sweep, cmd_validate_shapley, exit_code, output_dir_or_default,
    Overrides, SweepParam,
};

/// Deterministic multi-cloud federated learning simulator.
#[derive(Parser)]
#[command(name = "fedsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML experiment configuration; flags below override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed driving every random decision.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of federation rounds.
    #[arg(long)]
    rounds: Option<usize>,
    /// Aggregation strategy: fedavg, krum, trimmed_mean, median, fltrust,
    /// cost_trustfl.
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Attack kind: none, label_flip, gaussian, sign_flip, scale.
    #[arg(long)]
    attack: Option<AttackKind>,
    /// Fraction of clients acting maliciously.
    #[arg(long = "malicious-frac")]
    malicious_frac: Option<f64>,
    /// Dirichlet concentration for the non-IID partition.
    #[arg(long)]
    alpha: Option<f64>,
    /// Cost-pressure exponent in the selection score.
    #[arg(long)]
    lambda: Option<f64>,
    /// Reputation EMA memory.
    #[arg(long)]
    gamma: Option<f64>,
    /// Directory for CSV/JSON outputs (default: runs).
    #[arg(long = "output-dir")]
    output_dir: Option<PathBuf>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            rounds: self.rounds,
            strategy: self.strategy,
            attack: self.attack,
            malicious_frac: self.malicious_frac,
            alpha: self.alpha,
            lambda: self.lambda,
            gamma: self.gamma,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment; writes metrics.csv and summary.json.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Also write the wide per-client trust/reputation CSV.
        #[arg(long = "emit-client-metrics")]
        emit_client_metrics: bool,
    },
    /// Run a strategy x attack grid (or the ablation table) under one seed.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        /// Strategies to compare (comma separated).
        #[arg(long, value_delimiter = ',', default_values_t = Strategy::all())]
        strategies: Vec<Strategy>,
        /// Attacks to compare (comma separated).
        #[arg(long, value_delimiter = ',', default_values_t = vec![AttackKind::None])]
        attacks: Vec<AttackKind>,
        /// Emit the five-row knockout table instead of the strategy grid.
        #[arg(long)]
        ablation: bool,
    },
    /// Re-run the experiment over a grid of one parameter's values.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Which parameter to vary: lambda, malicious_fraction, alpha.
        #[arg(long)]
        param: SweepParam,
        /// Values to sweep (comma separated).
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Compare contribution scores against exact and Monte Carlo Shapley
    /// values on a small benign run.
    ValidateShapley {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of clients (exhaustive enumeration caps this at 12).
        #[arg(long, default_value_t = 8)]
        clients: usize,
        /// Round at which scores are compared.
        #[arg(long = "round", default_value_t = 10)]
        at_round: usize,
        /// Monte Carlo permutation count.
        #[arg(long, default_value_t = 5000)]
        permutations: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            common,
            emit_client_metrics,
        } => cmd_run(
            common.config.as_deref(),
            &common.overrides(),
            &output_dir_or_default(common.output_dir.clone()),
            *emit_client_metrics,
        ),
        Command::Compare {
            common,
            strategies,
            attacks,
            ablation,
        } => cmd_compare(
            common.config.as_deref(),
            &common.overrides(),
            &output_dir_or_default(common.output_dir.clone()),
            strategies,
            attacks,
            *ablation,
        ),
        Command::Sweep {
            common,
            param,
            values,
        } => cmd_sweep(
            common.config.as_deref(),
            &common.overrides(),
            &output_dir_or_default(common.output_dir.clone()),
            *param,
            values,
        ),
        Command::ValidateShapley {
            common,
            clients,
            at_round,
            permutations,
        } => cmd_validate_shapley(
            common.config.as_deref(),
            &common.overrides(),
            &output_dir_or_default(common.output_dir.clone()),
            *clients,
            *at_round,
            *permutations,
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
