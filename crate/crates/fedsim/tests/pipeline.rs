//! Orchestrator-level integration tests: determinism, conservation laws,
//! degenerate reductions, and the golden no-attack baseline.

use fedsim::aggregation::{aggregate_fedavg, Strategy};
use fedsim::attack::AttackKind;
use fedsim::config::ExperimentConfig;
use fedsim::linalg::ParameterVector;
use fedsim::orchestrator::{run_experiment, train_seed, Experiment};

fn small_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(seed, 5);
    cfg.topology.num_clouds = 3;
    cfg.topology.clients_per_cloud = 5;
    cfg.data.num_classes = 4;
    cfg.data.samples_per_class = 60;
    cfg.data.feature_dim = 8;
    cfg.data.reference_size = 20;
    cfg.model.hidden_dim = 6;
    cfg
}

#[test]
fn metrics_shape_and_ledger_invariants() {
    let mut cfg = small_config(3);
    cfg.attack.kind = AttackKind::SignFlip;
    let metrics = run_experiment(&cfg).unwrap();
    assert_eq!(metrics.len(), cfg.rounds);
    let mut prev_cum = 0.0;
    for (i, m) in metrics.iter().enumerate() {
        assert_eq!(m.round, i + 1);
        assert!(m.accuracy >= 0.0 && m.accuracy <= 1.0);
        assert!(m.cumulative_cost >= prev_cum, "cumulative cost decreased");
        prev_cum = m.cumulative_cost;
        assert!((m.cost.intra + m.cost.cross - m.cost.total).abs() < 1e-15);
        // Per-cloud selection budget: ceil(5 / 2) = 3 per cloud.
        assert_eq!(m.selected.len(), 9);
        let rep_total: f64 = m.r_hat.iter().sum();
        assert!((rep_total - 1.0).abs() < 1e-9, "reputation sum {rep_total}");
        let beta_total: f64 = m.beta.iter().sum();
        assert!((beta_total - 1.0).abs() < 1e-9, "beta sum {beta_total}");
    }
}

#[test]
fn identical_configs_give_bitwise_identical_metrics() {
    for strategy in [Strategy::FedAvg, Strategy::CostTrustFl] {
        let mut cfg = small_config(11);
        cfg.strategy = strategy;
        cfg.attack.kind = AttackKind::Gaussian;
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a, b, "strategy {strategy:?} not deterministic");
        let mut other = cfg.clone();
        other.seed += 1;
        let c = run_experiment(&other).unwrap();
        assert_ne!(a, c, "different seeds should differ");
    }
}

#[test]
fn single_client_pipeline_is_local_training() {
    // One cloud, one client, fedavg, eta = 1: the round's global model is
    // exactly the client's locally trained model.
    let mut cfg = small_config(7);
    cfg.rounds = 1;
    cfg.topology.num_clouds = 1;
    cfg.topology.clients_per_cloud = 1;
    cfg.data.reference_size = 0;
    cfg.strategy = Strategy::FedAvg;
    cfg.lambda = 0.0;
    cfg.m_per_cloud = Some(1);

    let experiment = Experiment::new(cfg.clone()).unwrap();
    let mut state = experiment.initial_state().unwrap();
    let w0 = state.w.clone();
    experiment.run_round(&mut state).unwrap();

    let update = experiment
        .model_spec()
        .local_train(&w0, &experiment.shards()[0], &cfg.train, train_seed(cfg.seed, 1, 0))
        .unwrap();
    let expected: Vec<f64> = w0
        .values()
        .iter()
        .zip(update.values())
        .map(|(w, g)| w - g)
        .collect();
    for (a, b) in state.w.values().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn uniform_trust_pipeline_matches_fedavg_oracle() {
    // K = 1, uniform trust, no normalization, no attack: each round's
    // applied aggregate equals the equal-count FedAvg of the selected
    // clients' updates.
    let mut cfg = small_config(19);
    cfg.rounds = 10;
    cfg.topology.num_clouds = 1;
    cfg.topology.clients_per_cloud = 8;
    cfg.uniform_trust = true;
    cfg.ablation.trust_normalization = false;
    cfg.strategy = Strategy::CostTrustFl;

    let experiment = Experiment::new(cfg.clone()).unwrap();
    let mut state = experiment.initial_state().unwrap();
    for round in 1..=cfg.rounds {
        let w_before = state.w.clone();
        let metrics = experiment.run_round(&mut state).unwrap();
        let updates: Vec<ParameterVector> = metrics
            .selected
            .iter()
            .map(|&i| {
                experiment
                    .model_spec()
                    .local_train(
                        &w_before,
                        &experiment.shards()[i],
                        &cfg.train,
                        train_seed(cfg.seed, round, i),
                    )
                    .unwrap()
            })
            .collect();
        let oracle = aggregate_fedavg(&updates, &vec![1; updates.len()]).unwrap();
        for (w, (w0, g)) in state
            .w
            .values()
            .iter()
            .zip(w_before.values().iter().zip(oracle.values()))
        {
            assert!((w - (w0 - cfg.eta * g)).abs() < 1e-9, "round {round}");
        }
    }
}

#[test]
fn hierarchical_knockout_equals_single_cloud_run() {
    let mut merged = small_config(23);
    merged.attack.kind = AttackKind::LabelFlip;
    merged.strategy = Strategy::CostTrustFl;
    merged.ablation.hierarchical = false;

    let mut flat = merged.clone();
    flat.ablation.hierarchical = true;
    flat.topology.num_clouds = 1;
    flat.topology.clients_per_cloud = 15;

    let a = run_experiment(&merged).unwrap();
    let b = run_experiment(&flat).unwrap();
    assert_eq!(a, b);
}

#[test]
fn ablation_flags_keep_selection_size() {
    // All flags off vs on, benign run: both complete with the same
    // per-round selection size.
    let mut on = small_config(29);
    on.lambda = 0.0;
    let mut off = on.clone();
    off.ablation.shapley_weighting = false;
    off.ablation.cost_aware_selection = false;
    off.ablation.trust_normalization = false;

    let a = run_experiment(&on).unwrap();
    let b = run_experiment(&off).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.selected.len(), y.selected.len());
    }
}

#[test]
fn zero_sample_clients_stay_in_roster() {
    // Extreme heterogeneity often leaves clients empty; the run must keep
    // indexing stable and their trust at zero when selected.
    let mut cfg = small_config(31);
    cfg.data.alpha = 0.05;
    cfg.data.reference_size = 4;
    cfg.m_per_cloud = Some(5); // full participation per cloud
    let metrics = run_experiment(&cfg).unwrap();
    assert_eq!(metrics.len(), cfg.rounds);
    for m in &metrics {
        assert_eq!(m.selected.len(), 15);
    }
}

#[test]
fn reference_gradient_aligns_with_benign_mean_on_iid_splits() {
    // The trust anchor points the same way as the clients at round 1.
    for seed in 1..=5 {
        let mut cfg = small_config(seed);
        cfg.data.alpha = 1000.0;
        cfg.strategy = Strategy::CostTrustFl;
        let experiment = Experiment::new(cfg.clone()).unwrap();
        let state = experiment.initial_state().unwrap();
        let updates: Vec<ParameterVector> = (0..15)
            .map(|i| {
                experiment
                    .model_spec()
                    .local_train(
                        &state.w,
                        &experiment.shards()[i],
                        &cfg.train,
                        train_seed(cfg.seed, 1, i),
                    )
                    .unwrap()
            })
            .collect();
        let mean = fedsim::linalg::weighted_sum(&updates, &vec![1.0 / 15.0; 15]).unwrap();
        let reference = experiment
            .model_spec()
            .reference_gradient(
                &state.w,
                &experiment.reference_shards()[0],
                &cfg.train,
                fedsim::orchestrator::reference_seed(cfg.seed, 1, 0),
            )
            .unwrap();
        let cos =
            fedsim::linalg::cosine_similarity(reference.values(), mean.values()).unwrap();
        assert!(cos > 0.5, "seed {seed}: cosine {cos}");
    }
}

#[test]
fn full_participation_has_unit_relative_cost() {
    let mut cfg = small_config(13);
    cfg.rounds = 3;
    cfg.m_per_cloud = Some(5);
    let table = fedsim::orchestrator::run_comparison(
        &cfg,
        &[Strategy::FedAvg],
        &[AttackKind::None],
    )
    .unwrap();
    assert_eq!(table.rel_cost, vec![1.0]);
    assert_eq!(table.accuracy.len(), 1);
    assert_eq!(table.accuracy[0].len(), 1);
}

#[test]
fn golden_no_attack_fedavg_baseline() {
    // IID split, no attack, FedAvg on the default synthetic task: final
    // accuracy above 85% for five seeds, values frozen bitwise.
    let golden: Vec<(u64, f64)> = include_str!("golden/fedavg_iid.csv")
        .lines()
        .skip(1)
        .map(|line| {
            let mut parts = line.split(',');
            let seed = parts.next().unwrap().parse().unwrap();
            let acc = parts.next().unwrap().parse().unwrap();
            (seed, acc)
        })
        .collect();
    assert_eq!(golden.len(), 5);
    for (seed, frozen) in golden {
        let mut cfg = ExperimentConfig::new(seed, 200);
        cfg.topology.clients_per_cloud = 15;
        cfg.strategy = Strategy::FedAvg;
        cfg.data.alpha = 1000.0;
        let metrics = run_experiment(&cfg).unwrap();
        let acc = metrics.last().unwrap().accuracy;
        assert!(acc > 0.85, "seed {seed}: accuracy {acc}");
        assert_eq!(acc, frozen, "seed {seed} drifted from golden value");
    }
}
