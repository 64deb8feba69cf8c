//! Command implementations behind the `fedsim` binary: experiment runs,
//! strategy/attack comparison grids, parameter sweeps, and the Shapley
//! validation report, each writing deterministic CSV/JSON artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fedsim::aggregation::Strategy;
use fedsim::attack::AttackKind;
use fedsim::config::ExperimentConfig;
use fedsim::error::{Error, Result};
use fedsim::orchestrator::{
    self, run_ablation_table, run_comparison, validate_shapley, RoundMetrics,
};

/// Flag-level overrides applied on top of the config file; every flag
/// mirrors a config key and wins over the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub rounds: Option<usize>,
    pub strategy: Option<Strategy>,
    pub attack: Option<AttackKind>,
    pub malicious_frac: Option<f64>,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
}

/// Base config when no `--config` file is given.
pub fn default_config() -> ExperimentConfig {
    ExperimentConfig::new(42, 100)
}

/// Load the config file (or the default) and apply flag overrides.
pub fn resolve_config(config_path: Option<&Path>, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = match config_path {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => default_config(),
    };
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(rounds) = overrides.rounds {
        cfg.rounds = rounds;
    }
    if let Some(strategy) = overrides.strategy {
        cfg.strategy = strategy;
    }
    if let Some(attack) = overrides.attack {
        cfg.attack.kind = attack;
    }
    if let Some(frac) = overrides.malicious_frac {
        cfg.attack.malicious_fraction = frac;
    }
    if let Some(alpha) = overrides.alpha {
        cfg.data.alpha = alpha;
    }
    if let Some(lambda) = overrides.lambda {
        cfg.lambda = lambda;
    }
    if let Some(gamma) = overrides.gamma {
        cfg.gamma = gamma;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Per-round metrics CSV: fixed column order, shortest-round-trip float
/// formatting, byte-identical across equal-seed runs.
pub fn metrics_csv(metrics: &[RoundMetrics], num_clouds: usize) -> String {
    let mut out = String::from("round,accuracy,loss,cost_round,cost_cum,cost_intra,cost_cross,selected_count");
    for k in 0..num_clouds {
        let _ = write!(out, ",beta_{k}");
    }
    out.push('\n');
    for m in metrics {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{}",
            m.round,
            m.accuracy,
            m.loss,
            m.cost.total,
            m.cumulative_cost,
            m.cost.intra,
            m.cost.cross,
            m.selected.len()
        );
        for k in 0..num_clouds {
            let _ = write!(out, ",{}", m.beta.get(k).copied().unwrap_or(0.0));
        }
        out.push('\n');
    }
    out
}

/// Optional wide per-client file: trust scores then smoothed reputations.
pub fn client_metrics_csv(metrics: &[RoundMetrics], num_clients: usize) -> String {
    let mut out = String::from("round");
    for i in 0..num_clients {
        let _ = write!(out, ",ts_{i}");
    }
    for i in 0..num_clients {
        let _ = write!(out, ",rhat_{i}");
    }
    out.push('\n');
    for m in metrics {
        let _ = write!(out, "{}", m.round);
        for i in 0..num_clients {
            let _ = write!(out, ",{}", m.trust_scores.get(i).copied().unwrap_or(0.0));
        }
        for i in 0..num_clients {
            let _ = write!(out, ",{}", m.r_hat.get(i).copied().unwrap_or(0.0));
        }
        out.push('\n');
    }
    out
}

/// Run summary written next to the metrics CSV; `config` echoes every
/// field of the resolved experiment configuration.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub rounds: usize,
    pub final_accuracy: f64,
    pub final_loss: f64,
    pub cumulative_cost: f64,
    pub config: ExperimentConfig,
}

pub fn cmd_run(
    config_path: Option<&Path>,
    overrides: &Overrides,
    output_dir: &Path,
    emit_client_metrics: bool,
) -> Result<()> {
    let cfg = resolve_config(config_path, overrides)?;
    let metrics = orchestrator::run_experiment(&cfg)?;
    let last = metrics.last().expect("rounds >= 1");

    let num_clouds = if cfg.ablation.hierarchical { cfg.topology.num_clouds } else { 1 };
    write_file(&output_dir.join("metrics.csv"), &metrics_csv(&metrics, num_clouds))?;
    if emit_client_metrics {
        write_file(
            &output_dir.join("client_metrics.csv"),
            &client_metrics_csv(&metrics, cfg.num_clients()),
        )?;
    }

    let summary = RunSummary {
        seed: cfg.seed,
        rounds: cfg.rounds,
        final_accuracy: last.accuracy,
        final_loss: last.loss,
        cumulative_cost: last.cumulative_cost,
        config: cfg,
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::invariant(format!("summary serialization failed: {e}")))?;
    write_file(&output_dir.join("summary.json"), &(json + "\n"))?;

    println!(
        "run complete: {} rounds, final accuracy {:.4}, cumulative cost {:.6e}",
        summary.rounds, summary.final_accuracy, summary.cumulative_cost
    );
    Ok(())
}

pub fn cmd_compare(
    config_path: Option<&Path>,
    overrides: &Overrides,
    output_dir: &Path,
    strategies: &[Strategy],
    attacks: &[AttackKind],
    ablation: bool,
) -> Result<()> {
    let cfg = resolve_config(config_path, overrides)?;
    if ablation {
        let rows = run_ablation_table(&cfg)?;
        let mut out = String::from("configuration,accuracy,rel_cost\n");
        for row in &rows {
            let _ = writeln!(out, "{},{},{}", row.label, row.accuracy, row.rel_cost);
        }
        write_file(&output_dir.join("ablation.csv"), &out)?;
        print!("{out}");
        return Ok(());
    }

    let table = run_comparison(&cfg, strategies, attacks)?;
    let mut out = String::from("strategy,rel_cost");
    for attack in &table.attacks {
        let _ = write!(out, ",acc_{}", attack.name());
    }
    out.push('\n');
    for (si, strategy) in table.strategies.iter().enumerate() {
        let _ = write!(out, "{},{}", strategy.name(), table.rel_cost[si]);
        for ai in 0..table.attacks.len() {
            let _ = write!(out, ",{}", table.accuracy[si][ai]);
        }
        out.push('\n');
    }
    write_file(&output_dir.join("comparison.csv"), &out)?;
    print!("{out}");
    Ok(())
}

/// Parameters a sweep may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Lambda,
    MaliciousFraction,
    Alpha,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(SweepParam::Lambda),
            "malicious_fraction" => Ok(SweepParam::MaliciousFraction),
            "alpha" => Ok(SweepParam::Alpha),
            other => Err(Error::config(format!(
                "unknown sweep parameter `{other}` (expected lambda, malicious_fraction, alpha)"
            ))),
        }
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Lambda => "lambda",
            SweepParam::MaliciousFraction => "malicious_fraction",
            SweepParam::Alpha => "alpha",
        }
    }
}

pub fn cmd_sweep(
    config_path: Option<&Path>,
    overrides: &Overrides,
    output_dir: &Path,
    param: SweepParam,
    values: &[f64],
) -> Result<()> {
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    let base = resolve_config(config_path, overrides)?;
    let mut out = format!("{},accuracy,cost_cum\n", param.name());
    for &value in values {
        let mut cfg = base.clone();
        match param {
            SweepParam::Lambda => cfg.lambda = value,
            SweepParam::MaliciousFraction => cfg.attack.malicious_fraction = value,
            SweepParam::Alpha => cfg.data.alpha = value,
        }
        cfg.validate()?;
        let metrics = orchestrator::run_experiment(&cfg)?;
        let last = metrics.last().expect("rounds >= 1");
        let _ = writeln!(out, "{},{},{}", value, last.accuracy, last.cumulative_cost);
    }
    write_file(&output_dir.join("sweep.csv"), &out)?;
    print!("{out}");
    Ok(())
}

#[derive(Debug, Serialize)]
struct ShapleyReport {
    clients: usize,
    round: usize,
    permutations: usize,
    pearson_phi_exact: Option<f64>,
    pearson_mc_exact: Option<f64>,
    max_abs_mc_error: f64,
    gradient_time_us: u128,
    exact_time_us: u128,
    monte_carlo_time_us: u128,
    phi: Vec<f64>,
    exact: Vec<f64>,
    monte_carlo: Vec<f64>,
}

pub fn cmd_validate_shapley(
    config_path: Option<&Path>,
    overrides: &Overrides,
    output_dir: &Path,
    clients: usize,
    at_round: usize,
    permutations: usize,
) -> Result<()> {
    if clients == 0 || clients > 12 {
        return Err(Error::config(format!(
            "shapley validation supports 1..=12 clients, got {clients}"
        )));
    }
    let mut cfg = resolve_config(config_path, overrides)?;
    // Validation runs on a single benign cloud with full participation.
    cfg.topology.num_clouds = 1;
    cfg.topology.clients_per_cloud = clients;
    cfg.m_per_cloud = Some(clients);
    cfg.attack.kind = AttackKind::None;
    cfg.rounds = cfg.rounds.max(at_round);
    cfg.validate()?;

    let v = validate_shapley(&cfg, at_round, permutations)?;
    println!(
        "gradient contribution scores: {:?} ({:?})",
        v.phi, v.gradient_time
    );
    println!("exact shapley: {:?} ({:?})", v.exact, v.exact_time);
    println!(
        "monte carlo shapley ({permutations} permutations): {:?} ({:?})",
        v.monte_carlo, v.monte_carlo_time
    );
    let fmt_corr = |c: Option<f64>| match c {
        Some(r) => format!("{r:.4}"),
        None => "n/a (needs >= 3 clients)".to_string(),
    };
    println!("pearson(contribution, exact) = {}", fmt_corr(v.pearson_phi_exact));
    println!("pearson(monte_carlo, exact) = {}", fmt_corr(v.pearson_mc_exact));
    println!("max |monte_carlo - exact| = {:.6}", v.max_abs_mc_error);

    let report = ShapleyReport {
        clients,
        round: at_round,
        permutations,
        pearson_phi_exact: v.pearson_phi_exact,
        pearson_mc_exact: v.pearson_mc_exact,
        max_abs_mc_error: v.max_abs_mc_error,
        gradient_time_us: v.gradient_time.as_micros(),
        exact_time_us: v.exact_time.as_micros(),
        monte_carlo_time_us: v.monte_carlo_time.as_micros(),
        phi: v.phi,
        exact: v.exact,
        monte_carlo: v.monte_carlo,
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::invariant(format!("report serialization failed: {e}")))?;
    write_file(&output_dir.join("shapley_validation.json"), &(json + "\n"))?;
    Ok(())
}

/// Map an error to the documented process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Contract(_) | Error::Invariant(_) | Error::Io { .. } => 3,
    }
}

/// Output directory argument with its default.
pub fn output_dir_or_default(dir: Option<PathBuf>) -> PathBuf {
    dir.unwrap_or_else(|| PathBuf::from("runs"))
}
