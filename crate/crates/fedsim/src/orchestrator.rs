//! The round engine: per-round intra-cloud selection, local training,
//! attacks, reputation, trust aggregation, and the cross-cloud global step,
//! all derived deterministically from one experiment seed.

use std::collections::BTreeSet;

use crate::aggregation::{
    self, aggregate_crosscloud, aggregate_fedavg, aggregate_krum,
    aggregate_median, aggregate_trimmed_mean, aggregate_trustfl_with, normalize_update, Strategy,
    TrustAggOptions,
};
use crate::attack::{self, AttackKind};
use crate::config::{ExperimentConfig, SelectionScope};
use crate::data::{self, Dataset};
use crate::economy::{self, CloudTopology, CostLedger, RoundCost};
use crate::error::{Error, Result};
use crate::linalg::{weighted_sum, ParameterVector};
use crate::model::ModelSpec;
use crate::reputation::{self, ReputationState};
use crate::seed::{self, stream};

/// Seed for client `client`'s local training in 1-based `round`.
pub fn train_seed(seed: u64, round: usize, client: usize) -> u64 {
    seed::derive(seed, &[stream::TRAIN, round as u64, client as u64])
}

/// Seed for the update-level attack applied to `client` in `round`.
pub fn attack_seed(seed: u64, round: usize, client: usize) -> u64 {
    seed::derive(seed, &[stream::ATTACK, round as u64, client as u64])
}

/// Seed for cloud `cloud`'s reference gradient in `round`.
pub fn reference_seed(seed: u64, round: usize, cloud: usize) -> u64 {
    seed::derive(seed, &[stream::REF_TRAIN, round as u64, cloud as u64])
}

/// Everything recorded about one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    /// 1-based round index.
    pub round: usize,
    pub accuracy: f64,
    pub loss: f64,
    /// Selected client ids, ascending, across all clouds.
    pub selected: Vec<usize>,
    /// Cross-cloud weights indexed by cloud; non-participating clouds are 0.
    pub beta: Vec<f64>,
    pub cost: RoundCost,
    pub cumulative_cost: f64,
    /// Trust scores indexed by client; unselected clients are 0. Empty for
    /// strategies that do not compute trust.
    pub trust_scores: Vec<f64>,
    /// Smoothed reputation snapshot indexed by client.
    pub r_hat: Vec<f64>,
}

/// Mutable per-run state committed once per round.
#[derive(Debug, Clone)]
pub struct SimState {
    /// Completed rounds.
    pub round: usize,
    pub w: ParameterVector,
    pub reputation: ReputationState,
    pub ledger: CostLedger,
    /// Gaussian sigma after round-1 calibration.
    pub resolved_sigma: Option<f64>,
}

/// Immutable experiment setup: topology, data shards, malicious roster,
/// and the initial model.
pub struct Experiment {
    cfg: ExperimentConfig,
    topology: CloudTopology,
    spec: ModelSpec,
    shards: Vec<Dataset>,
    reference_shards: Vec<Dataset>,
    test_set: Dataset,
    malicious: BTreeSet<usize>,
    w0: ParameterVector,
    model_size_gb: f64,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;

        // The hierarchical knockout merges every cloud into one before any
        // data or cost decision, so a merged run is bit-identical to a
        // genuine single-cloud run over the same roster.
        let base = cfg.topology.build()?;
        let topology = if cfg.ablation.hierarchical || base.num_clouds() == 1 {
            base
        } else {
            CloudTopology::uniform(
                1,
                base.num_clients(),
                base.c_intra(),
                base.c_cross(),
                base.global_home().map(|_| 0),
            )?
            .with_accounting(base.accounting())
            .with_charge_downlink(cfg.topology.charge_downlink)
        };

        let spec = cfg.model_spec();
        let source = match &cfg.data.source {
            Some(path) => {
                let loaded = data::read_dataset(std::path::Path::new(path))?;
                if loaded.feature_dim() != cfg.data.feature_dim
                    || loaded.num_classes() != cfg.data.num_classes
                {
                    return Err(Error::config(format!(
                        "dataset {path} has feature_dim {} / num_classes {}, config says {} / {}",
                        loaded.feature_dim(),
                        loaded.num_classes(),
                        cfg.data.feature_dim,
                        cfg.data.num_classes
                    )));
                }
                loaded
            }
            None => data::generate_synthetic(
                cfg.data.num_classes,
                cfg.data.samples_per_class,
                cfg.data.feature_dim,
                cfg.seed,
            )?,
        };
        let (train_pool, test_set) = data::stratified_split(&source, cfg.data.test_fraction, cfg.seed)?;

        let partition =
            data::dirichlet_partition(&train_pool, topology.num_clients(), cfg.data.alpha, cfg.seed)?;
        if !partition.zero_sample_clients.is_empty() {
            log::debug!(
                "{} clients received zero samples at alpha {}",
                partition.zero_sample_clients.len(),
                cfg.data.alpha
            );
        }
        if cfg.strategy.uses_reference() && cfg.data.reference_size == 0 {
            return Err(Error::config(format!(
                "strategy {} needs reference_size >= 1",
                cfg.strategy.name()
            )));
        }
        let split = data::carve_reference(
            &partition.shards,
            &topology,
            cfg.data.reference_size,
            cfg.seed,
        )?;

        let malicious = if cfg.attack.kind == AttackKind::None {
            BTreeSet::new()
        } else {
            attack::assign_malicious(
                topology.num_clients(),
                cfg.attack.malicious_fraction,
                &topology,
                cfg.seed,
            )?
        };

        let mut shards = split.client_shards;
        if cfg.attack.kind == AttackKind::LabelFlip {
            for &bad in &malicious {
                shards[bad] = attack::flip_labels(&shards[bad], cfg.data.num_classes, cfg.seed)?;
            }
        }

        let w0 = spec.init_params(cfg.seed)?;
        let model_size_gb = cfg.model_size_gb();

        Ok(Experiment {
            cfg,
            topology,
            spec,
            shards,
            reference_shards: split.reference_shards,
            test_set,
            malicious,
            w0,
            model_size_gb,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn topology(&self) -> &CloudTopology {
        &self.topology
    }

    pub fn model_spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn shards(&self) -> &[Dataset] {
        &self.shards
    }

    pub fn reference_shards(&self) -> &[Dataset] {
        &self.reference_shards
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test_set
    }

    pub fn malicious(&self) -> &BTreeSet<usize> {
        &self.malicious
    }

    pub fn initial_state(&self) -> Result<SimState> {
        Ok(SimState {
            round: 0,
            w: self.w0.clone(),
            reputation: ReputationState::new(self.topology.num_clients(), self.cfg.gamma)?,
            ledger: CostLedger::new(),
            resolved_sigma: self.cfg.attack.sigma,
        })
    }

    /// Per-cloud participant budget on the effective topology.
    fn budget(&self, cloud: usize) -> usize {
        let n_k = self.topology.cloud_size(cloud);
        self.cfg.m_per_cloud.unwrap_or(n_k.div_ceil(2)).min(n_k)
    }

    /// Cost of one full-participation round, the relative-cost denominator.
    pub fn full_participation_round_cost(&self) -> Result<RoundCost> {
        let all: Vec<usize> = (0..self.topology.num_clients()).collect();
        economy::round_cost(&all, self.model_size_gb, &self.topology)
    }

    /// Select this round's participants, one sorted id list per cloud.
    fn select_round(&self, r_hat: &[f64], round: usize) -> Result<Vec<Vec<usize>>> {
        let k = self.topology.num_clouds();
        let reputation_driven =
            self.cfg.strategy == Strategy::CostTrustFl && self.cfg.ablation.cost_aware_selection;
        let mut rng = seed::rng(self.cfg.seed, &[stream::SELECT, round as u64]);
        let mut per_cloud: Vec<Vec<usize>> = vec![Vec::new(); k];
        match self.cfg.selection_scope {
            SelectionScope::PerCloud => {
                for cloud in 0..k {
                    let candidates = self.topology.clients_of(cloud);
                    let m = self.budget(cloud);
                    per_cloud[cloud] = if reputation_driven {
                        economy::select_clients(r_hat, &self.topology, &candidates, m, self.cfg.lambda)?
                    } else {
                        economy::select_random(&candidates, m, &mut rng)?
                    };
                }
            }
            SelectionScope::Global => {
                let candidates: Vec<usize> = (0..self.topology.num_clients()).collect();
                let budget: usize = (0..k).map(|c| self.budget(c)).sum();
                let chosen = if reputation_driven {
                    economy::select_clients(r_hat, &self.topology, &candidates, budget, self.cfg.lambda)?
                } else {
                    economy::select_random(&candidates, budget, &mut rng)?
                };
                for id in chosen {
                    per_cloud[self.topology.cloud_of(id)].push(id);
                }
            }
        }
        Ok(per_cloud)
    }

    /// One round of Algorithm-style execution; commits state and returns
    /// the round's metrics.
    pub fn run_round(&self, state: &mut SimState) -> Result<RoundMetrics> {
        let round = state.round + 1;
        let n = self.topology.num_clients();
        let selections = self.select_round(&state.reputation.r_hat, round)?;

        // Local training for every selected client, honest first.
        let mut updates: Vec<Option<ParameterVector>> = vec![None; n];
        for cloud_sel in &selections {
            for &i in cloud_sel {
                let g = self.spec.local_train(
                    &state.w,
                    &self.shards[i],
                    &self.cfg.train,
                    train_seed(self.cfg.seed, round, i),
                )?;
                updates[i] = Some(g);
            }
        }

        // Calibrate the Gaussian attack once: the noise vector's expected
        // norm matches the mean benign update norm measured at round 1, so
        // the per-coordinate std is that norm over sqrt(d).
        if self.cfg.attack.kind == AttackKind::Gaussian && state.resolved_sigma.is_none() {
            let benign_norms: Vec<f64> = selections
                .iter()
                .flatten()
                .filter(|i| !self.malicious.contains(i))
                .filter_map(|&i| updates[i].as_ref().map(|g| g.l2_norm()))
                .collect();
            let norms: Vec<f64> = if benign_norms.is_empty() {
                selections
                    .iter()
                    .flatten()
                    .filter_map(|&i| updates[i].as_ref().map(|g| g.l2_norm()))
                    .collect()
            } else {
                benign_norms
            };
            let mean_norm = norms.iter().sum::<f64>() / norms.len().max(1) as f64;
            let sigma = mean_norm / (self.spec.param_count() as f64).sqrt();
            state.resolved_sigma = Some(sigma);
        }

        if self.cfg.attack.kind.is_update_attack() {
            let mut attack_cfg = self.cfg.attack;
            attack_cfg.sigma = state.resolved_sigma;
            for cloud_sel in &selections {
                for &i in cloud_sel {
                    if self.malicious.contains(&i) {
                        let honest = updates[i].take().expect("selected client trained");
                        updates[i] = Some(attack::perturb_update(
                            &honest,
                            &attack_cfg,
                            attack_seed(self.cfg.seed, round, i),
                        )?);
                    }
                }
            }
        }

        // Intra-cloud phase.
        let trust_based = self.cfg.strategy.uses_reference();
        let mut cloud_updates = Vec::new();
        let mut cloud_refs = Vec::new();
        let mut cloud_sizes = Vec::new();
        let mut participating = Vec::new();
        let mut trust_snapshot = if trust_based { vec![0.0; n] } else { Vec::new() };

        for (cloud, sel) in selections.iter().enumerate() {
            if sel.is_empty() {
                continue;
            }
            let cloud_update = self.aggregate_cloud(state, round, cloud, sel, &updates, &mut trust_snapshot)?;
            cloud_updates.push(cloud_update.update);
            cloud_refs.push(cloud_update.reference);
            cloud_sizes.push(self.topology.cloud_size(cloud));
            participating.push(cloud);
        }
        if cloud_updates.is_empty() {
            return Err(Error::invariant("no cloud produced an update this round"));
        }

        // Cross-cloud phase.
        let mut beta_by_cloud = vec![0.0; self.topology.num_clouds()];
        let global_update = if trust_based {
            let refs: Vec<ParameterVector> =
                cloud_refs.iter().map(|r| r.clone().expect("trust strategies carry references")).collect();
            let (combined, beta) = aggregate_crosscloud(&cloud_updates, &refs, &cloud_sizes)?;
            for (slot, b) in participating.iter().zip(beta) {
                beta_by_cloud[*slot] = b;
            }
            combined
        } else {
            let cloud_counts: Vec<f64> = participating
                .iter()
                .map(|&cloud| {
                    selections[cloud]
                        .iter()
                        .map(|&i| self.shards[i].len() as f64)
                        .sum::<f64>()
                })
                .collect();
            let total: f64 = cloud_counts.iter().sum();
            let beta: Vec<f64> = if total > 0.0 {
                cloud_counts.iter().map(|c| c / total).collect()
            } else {
                vec![1.0 / cloud_updates.len() as f64; cloud_updates.len()]
            };
            for (slot, &b) in participating.iter().zip(&beta) {
                beta_by_cloud[*slot] = b;
            }
            weighted_sum(&cloud_updates, &beta)?
        };

        // Global step: w <- w - eta * aggregate.
        let eta = self.cfg.eta;
        let new_w: Vec<f64> = state
            .w
            .values()
            .iter()
            .zip(global_update.values())
            .map(|(w, g)| w - eta * g)
            .collect();
        let new_w = ParameterVector::new(new_w, state.w.layer_map().clone())?;

        let (loss, accuracy) = self.spec.forward_loss(&new_w, &self.test_set)?;

        let selected_all: Vec<usize> = {
            let mut v: Vec<usize> = selections.iter().flatten().copied().collect();
            v.sort_unstable();
            v
        };

        // Non-participants drift back toward the uniform 1/N allocation,
        // the counterpart of the per-cloud mass redistribution above.
        if self.cfg.strategy == Strategy::CostTrustFl && self.cfg.ablation.shapley_weighting {
            let uniform = 1.0 / n as f64;
            let gamma = state.reputation.gamma;
            let mut is_selected = vec![false; n];
            for &i in &selected_all {
                is_selected[i] = true;
            }
            for i in 0..n {
                if !is_selected[i] {
                    state.reputation.r[i] = uniform;
                    state.reputation.r_hat[i] =
                        gamma * state.reputation.r_hat[i] + (1.0 - gamma) * uniform;
                }
            }
        }

        let cost = economy::round_cost(&selected_all, self.model_size_gb, &self.topology)?;
        state.ledger.record_round(&cost);

        let rep_sum: f64 = state.reputation.r_hat.iter().sum();
        if (rep_sum - 1.0).abs() > 1e-9 {
            return Err(Error::invariant(format!(
                "reputation mass drifted to {rep_sum} at round {round}"
            )));
        }

        state.w = new_w;
        state.round = round;

        Ok(RoundMetrics {
            round,
            accuracy,
            loss,
            selected: selected_all,
            beta: beta_by_cloud,
            cost,
            cumulative_cost: state.ledger.cumulative,
            trust_scores: trust_snapshot,
            r_hat: state.reputation.r_hat.clone(),
        })
    }

    fn aggregate_cloud(
        &self,
        state: &mut SimState,
        round: usize,
        cloud: usize,
        sel: &[usize],
        updates: &[Option<ParameterVector>],
        trust_snapshot: &mut [f64],
    ) -> Result<CloudAggregate> {
        let cloud_updates: Vec<ParameterVector> = sel
            .iter()
            .map(|&i| updates[i].clone().expect("selected client trained"))
            .collect();
        let counts: Vec<usize> = sel.iter().map(|&i| self.shards[i].len()).collect();

        match self.cfg.strategy {
            Strategy::FedAvg => {
                let total: usize = counts.iter().sum();
                let update = if total == 0 {
                    state.w.zeros_like()
                } else {
                    aggregate_fedavg(&cloud_updates, &counts)?
                };
                Ok(CloudAggregate { update, reference: None })
            }
            Strategy::Krum => {
                if cloud_updates.len() < 3 {
                    return Err(Error::config(format!(
                        "krum needs at least 3 selected clients per cloud, cloud {cloud} has {}",
                        cloud_updates.len()
                    )));
                }
                let requested = self.cfg.krum_f.unwrap_or_else(|| {
                    (self.cfg.attack.malicious_fraction * cloud_updates.len() as f64).floor() as usize
                });
                // Keep n >= 2f + 3 by clamping the assumed bound.
                let feasible = (cloud_updates.len() - 3) / 2;
                let f = requested.min(feasible);
                Ok(CloudAggregate {
                    update: aggregate_krum(&cloud_updates, f)?,
                    reference: None,
                })
            }
            Strategy::TrimmedMean => Ok(CloudAggregate {
                update: aggregate_trimmed_mean(&cloud_updates, self.cfg.trim_fraction)?,
                reference: None,
            }),
            Strategy::Median => Ok(CloudAggregate {
                update: aggregate_median(&cloud_updates)?,
                reference: None,
            }),
            Strategy::FlTrust | Strategy::CostTrustFl => {
                let reference = self.spec.reference_gradient(
                    &state.w,
                    &self.reference_shards[cloud],
                    &self.cfg.train,
                    reference_seed(self.cfg.seed, round, cloud),
                )?;

                let shapley_on =
                    self.cfg.strategy == Strategy::CostTrustFl && self.cfg.ablation.shapley_weighting;
                if shapley_on {
                    // Contribution scores over this cloud's participants.
                    // Each cloud redistributes its participants' neutral
                    // reputation allocation (m_k / N) by contribution
                    // share; together with the uniform pull applied to
                    // non-participants in run_round, the global total
                    // stays exactly 1 and idle clients drift back toward
                    // uniform instead of being locked out.
                    let phi = reputation::contribution_scores(&cloud_updates)?;
                    let shares = reputation::normalize(&phi);
                    let n_total = state.reputation.num_clients() as f64;
                    let mass = sel.len() as f64 / n_total;
                    let gamma = state.reputation.gamma;
                    for ((&i, &share), &phi_i) in sel.iter().zip(&shares).zip(&phi) {
                        let r_new = share * mass;
                        state.reputation.phi[i] = phi_i;
                        state.reputation.r[i] = r_new;
                        state.reputation.r_hat[i] =
                            gamma * state.reputation.r_hat[i] + (1.0 - gamma) * r_new;
                    }
                }

                let r_slice: Vec<f64> = if self.cfg.strategy == Strategy::FlTrust || !shapley_on {
                    vec![1.0 / cloud_updates.len() as f64; cloud_updates.len()]
                } else {
                    sel.iter().map(|&i| state.reputation.r_hat[i]).collect()
                };

                let opts = TrustAggOptions {
                    normalize_updates: self.cfg.strategy == Strategy::FlTrust
                        || self.cfg.ablation.trust_normalization,
                    cosine_scope: self.cfg.cosine_scope(),
                };

                let update = if self.cfg.uniform_trust {
                    // Diagnostic mode: every participant weighs the same.
                    for &i in sel {
                        trust_snapshot[i] = 1.0 / cloud_updates.len() as f64;
                    }
                    let prepared: Vec<ParameterVector> = if opts.normalize_updates {
                        cloud_updates
                            .iter()
                            .map(|g| normalize_update(g, &reference).unwrap_or_else(|| g.zeros_like()))
                            .collect()
                    } else {
                        cloud_updates.clone()
                    };
                    let uniform = vec![1.0 / prepared.len() as f64; prepared.len()];
                    weighted_sum(&prepared, &uniform)?
                } else {
                    let ts = aggregation::trust_scores(
                        &cloud_updates,
                        &reference,
                        &r_slice,
                        opts.cosine_scope,
                    )?;
                    for (&i, &t) in sel.iter().zip(&ts) {
                        trust_snapshot[i] = t;
                    }
                    aggregate_trustfl_with(&cloud_updates, &reference, &r_slice, &opts)?
                };
                Ok(CloudAggregate {
                    update,
                    reference: Some(reference),
                })
            }
        }
    }

    /// Run the configured number of rounds from a fresh state.
    pub fn run(&self) -> Result<Vec<RoundMetrics>> {
        let mut state = self.initial_state()?;
        let mut metrics = Vec::with_capacity(self.cfg.rounds);
        for _ in 0..self.cfg.rounds {
            metrics.push(self.run_round(&mut state)?);
        }
        Ok(metrics)
    }
}

struct CloudAggregate {
    update: ParameterVector,
    reference: Option<ParameterVector>,
}

/// Build and run an experiment from a config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RoundMetrics>> {
    Experiment::new(cfg.clone())?.run()
}

/// Strategy x attack accuracy grid with a per-strategy relative-cost
/// column, all runs sharing one seed (hence one data partition and one
/// malicious roster per attack).
#[derive(Debug, Clone)]
pub struct ComparisonTable {
    pub strategies: Vec<Strategy>,
    pub attacks: Vec<AttackKind>,
    /// `accuracy[s][a]` is strategy `s`'s final accuracy under attack `a`.
    pub accuracy: Vec<Vec<f64>>,
    /// Cumulative cost relative to full participation, per strategy.
    pub rel_cost: Vec<f64>,
}

pub fn run_comparison(
    cfg: &ExperimentConfig,
    strategies: &[Strategy],
    attacks: &[AttackKind],
) -> Result<ComparisonTable> {
    if strategies.is_empty() || attacks.is_empty() {
        return Err(Error::config("comparison needs at least one strategy and one attack"));
    }
    let mut accuracy = vec![vec![0.0; attacks.len()]; strategies.len()];
    let mut rel_cost = vec![0.0; strategies.len()];
    for (si, &strategy) in strategies.iter().enumerate() {
        for (ai, &attack_kind) in attacks.iter().enumerate() {
            let mut run_cfg = cfg.clone();
            run_cfg.strategy = strategy;
            run_cfg.attack.kind = attack_kind;
            let experiment = Experiment::new(run_cfg)?;
            let metrics = experiment.run()?;
            let last = metrics.last().expect("rounds >= 1");
            accuracy[si][ai] = last.accuracy;
            if ai == 0 {
                let full = experiment.full_participation_round_cost()?.total
                    * cfg.rounds as f64;
                rel_cost[si] = if full > 0.0 { last.cumulative_cost / full } else { 0.0 };
            }
        }
    }
    Ok(ComparisonTable {
        strategies: strategies.to_vec(),
        attacks: attacks.to_vec(),
        accuracy,
        rel_cost,
    })
}

/// One knockout row: configuration label, final accuracy, relative cost.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub label: String,
    pub accuracy: f64,
    pub rel_cost: f64,
}

/// The full pipeline plus the four single-flag knockouts. The relative-cost
/// column is normalized to the `no_cost_aware_selection` row, which is
/// therefore 1.0 by construction.
pub fn run_ablation_table(cfg: &ExperimentConfig) -> Result<Vec<AblationRow>> {
    let variants: [(&str, fn(&mut ExperimentConfig)); 5] = [
        ("full", |_| {}),
        ("no_shapley_weighting", |c| c.ablation.shapley_weighting = false),
        ("no_cost_aware_selection", |c| c.ablation.cost_aware_selection = false),
        ("no_hierarchical", |c| c.ablation.hierarchical = false),
        ("no_trust_normalization", |c| c.ablation.trust_normalization = false),
    ];
    let mut rows = Vec::with_capacity(variants.len());
    let mut costs = Vec::with_capacity(variants.len());
    for (label, tweak) in variants {
        let mut run_cfg = cfg.clone();
        run_cfg.strategy = Strategy::CostTrustFl;
        tweak(&mut run_cfg);
        let experiment = Experiment::new(run_cfg)?;
        let metrics = experiment.run()?;
        let last = metrics.last().expect("rounds >= 1");
        costs.push(last.cumulative_cost);
        rows.push(AblationRow {
            label: label.to_string(),
            accuracy: last.accuracy,
            rel_cost: 0.0,
        });
    }
    let baseline = costs[2];
    for (row, cost) in rows.iter_mut().zip(&costs) {
        row.rel_cost = if baseline > 0.0 { cost / baseline } else { 0.0 };
    }
    Ok(rows)
}

/// Outcome of validating the cheap contribution score against the Shapley
/// oracles at one round of a benign run. Correlations need at least three
/// clients and are `None` below that.
#[derive(Debug, Clone)]
pub struct ShapleyValidation {
    pub phi: Vec<f64>,
    pub exact: Vec<f64>,
    pub monte_carlo: Vec<f64>,
    pub pearson_phi_exact: Option<f64>,
    pub pearson_mc_exact: Option<f64>,
    pub max_abs_mc_error: f64,
    pub gradient_time: std::time::Duration,
    pub exact_time: std::time::Duration,
    pub monte_carlo_time: std::time::Duration,
}

/// Advance a benign run to `at_round`, then compare contribution scores
/// against exact and Monte Carlo Shapley values of the accuracy
/// characteristic: `v(S)` is the test accuracy after applying the FedAvg
/// aggregate of S's updates to the current model, `v(empty)` the accuracy
/// of the unmodified model.
pub fn validate_shapley(
    cfg: &ExperimentConfig,
    at_round: usize,
    permutations: usize,
) -> Result<ShapleyValidation> {
    let n = cfg.num_clients();
    if n > reputation::EXACT_SHAPLEY_MAX_CLIENTS {
        return Err(Error::config(format!(
            "shapley validation enumerates 2^N coalitions; {n} clients exceeds the cap of {}",
            reputation::EXACT_SHAPLEY_MAX_CLIENTS
        )));
    }
    if at_round == 0 {
        return Err(Error::config("validation round must be >= 1"));
    }
    let experiment = Experiment::new(cfg.clone())?;
    let mut state = experiment.initial_state()?;
    for _ in 0..at_round - 1 {
        experiment.run_round(&mut state)?;
    }
    let round = state.round + 1;

    // Full-roster updates at the chosen round, independent of selection.
    let updates: Vec<ParameterVector> = (0..n)
        .map(|i| {
            experiment.spec.local_train(
                &state.w,
                &experiment.shards[i],
                &experiment.cfg.train,
                train_seed(experiment.cfg.seed, round, i),
            )
        })
        .collect::<Result<_>>()?;
    let counts: Vec<usize> = (0..n).map(|i| experiment.shards[i].len()).collect();

    let grad_start = std::time::Instant::now();
    let phi = reputation::contribution_scores(&updates)?;
    let gradient_time = grad_start.elapsed();

    // Memoized characteristic over coalition bitmasks.
    let mut cache: Vec<Option<f64>> = vec![None; 1 << n];
    let spec = experiment.spec;
    let eta = experiment.cfg.eta;
    let w = state.w.clone();
    let test = experiment.test_set.clone();
    let mut characteristic = move |mask: u64| -> f64 {
        if let Some(v) = cache[mask as usize] {
            return v;
        }
        let value = if mask == 0 {
            let (_, acc) = spec.forward_loss(&w, &test).expect("test set is non-empty");
            acc
        } else {
            let members: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let subset: Vec<ParameterVector> = members.iter().map(|&i| updates[i].clone()).collect();
            let subset_counts: Vec<usize> = members.iter().map(|&i| counts[i]).collect();
            let aggregate = if subset_counts.iter().sum::<usize>() == 0 {
                w.zeros_like()
            } else {
                aggregate_fedavg(&subset, &subset_counts).expect("non-empty subset")
            };
            let stepped: Vec<f64> = w
                .values()
                .iter()
                .zip(aggregate.values())
                .map(|(wi, gi)| wi - eta * gi)
                .collect();
            let stepped = ParameterVector::new(stepped, w.layer_map().clone())
                .expect("finite step");
            let (_, acc) = spec.forward_loss(&stepped, &test).expect("test set is non-empty");
            acc
        };
        cache[mask as usize] = Some(value);
        value
    };

    let exact_start = std::time::Instant::now();
    let exact = reputation::exact_shapley(&mut characteristic, n)?;
    let exact_time = exact_start.elapsed();

    let mc_start = std::time::Instant::now();
    let monte_carlo =
        reputation::monte_carlo_shapley(&mut characteristic, n, permutations, cfg.seed)?;
    let monte_carlo_time = mc_start.elapsed();

    let (pearson_phi_exact, pearson_mc_exact) = if n >= 3 {
        (
            Some(reputation::shapley_correlation(&phi, &exact)?),
            Some(reputation::shapley_correlation(&monte_carlo, &exact)?),
        )
    } else {
        (None, None)
    };
    let max_abs_mc_error = exact
        .iter()
        .zip(&monte_carlo)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);

    Ok(ShapleyValidation {
        phi,
        exact,
        monte_carlo,
        pearson_phi_exact,
        pearson_mc_exact,
        max_abs_mc_error,
        gradient_time,
        exact_time,
        monte_carlo_time,
    })
}
