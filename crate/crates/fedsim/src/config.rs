//! Experiment configuration: the TOML schema, defaults, and validation.
//!
//! Only `seed` and `rounds` are required; everything else has the defaults
//! documented in the README. CLI flags override file values field by field.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregation::{CosineScope, Strategy};
use crate::attack::AttackConfig;
use crate::economy::{CloudTopology, CostAccounting};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, TrainConfig};

/// Bytes per transferred parameter when converting model size to GB for
/// the cost ledger.
pub const BYTES_PER_PARAM: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub num_clouds: usize,
    pub clients_per_cloud: usize,
    pub c_intra: f64,
    pub c_cross: f64,
    /// Cloud hosting the global aggregator; absent means an external site,
    /// so every edge leg crosses cloud boundaries.
    pub global_home: Option<usize>,
    pub cost_accounting: CostAccounting,
    pub charge_downlink: bool,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            num_clouds: 3,
            clients_per_cloud: 30,
            c_intra: 0.01,
            c_cross: 0.09,
            global_home: None,
            cost_accounting: CostAccounting::Hierarchical,
            charge_downlink: false,
        }
    }
}

impl TopologyConfig {
    pub fn build(&self) -> Result<CloudTopology> {
        Ok(CloudTopology::uniform(
            self.num_clouds,
            self.clients_per_cloud,
            self.c_intra,
            self.c_cross,
            self.global_home,
        )?
        .with_accounting(self.cost_accounting)
        .with_charge_downlink(self.charge_downlink))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Path to a columnar dataset file; absent means synthetic blobs.
    pub source: Option<String>,
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub feature_dim: usize,
    /// Dirichlet concentration controlling heterogeneity.
    pub alpha: f64,
    pub test_fraction: f64,
    /// Per-cloud reference shard size carved out for the trust anchor.
    pub reference_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: None,
            num_classes: 10,
            samples_per_class: 200,
            feature_dim: 32,
            alpha: 0.5,
            test_fraction: 0.2,
            reference_size: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden width; 0 selects softmax regression.
    pub hidden_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { hidden_dim: 16 }
    }
}

/// Table-2 style knockout flags; everything on is the full pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub shapley_weighting: bool,
    pub cost_aware_selection: bool,
    pub hierarchical: bool,
    pub trust_normalization: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            shapley_weighting: true,
            cost_aware_selection: true,
            hierarchical: true,
            trust_normalization: true,
        }
    }
}

/// Scope of the per-round selection budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionScope {
    /// Budget `m` applied inside every cloud, so each cloud participates.
    #[default]
    PerCloud,
    /// One global budget of `sum_k m_k`, free to concentrate on cheap
    /// clouds.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random decision in the run derives from it.
    pub seed: u64,
    /// Number of federation rounds `T`.
    pub rounds: usize,

    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub topology: TopologyConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub ablation: AblationFlags,

    /// Cost-pressure exponent in the selection score `r_hat / c^lambda`.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Reputation EMA memory.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Participants per cloud per round; absent means `ceil(n_k / 2)`.
    #[serde(default)]
    pub m_per_cloud: Option<usize>,
    #[serde(default)]
    pub selection_scope: SelectionScope,
    /// Global-step learning rate applied to the aggregated update.
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Cosine over full vectors instead of last-layer slices (ablation).
    #[serde(default)]
    pub cosine_full: bool,
    /// Krum's assumed malicious bound; absent derives it from the attack's
    /// malicious fraction and the per-cloud selection size.
    #[serde(default)]
    pub krum_f: Option<usize>,
    /// Trimmed-mean trim fraction per side.
    #[serde(default = "default_trim")]
    pub trim_fraction: f64,
    /// Diagnostic mode pinning every trust score to the same value, used by
    /// the degenerate-hierarchy regression checks.
    #[serde(default)]
    pub uniform_trust: bool,
}

fn default_lambda() -> f64 {
    0.3
}

fn default_gamma() -> f64 {
    0.9
}

fn default_eta() -> f64 {
    1.0
}

fn default_trim() -> f64 {
    0.3
}

impl ExperimentConfig {
    /// Minimal config with defaults everywhere else.
    pub fn new(seed: u64, rounds: usize) -> Self {
        ExperimentConfig {
            seed,
            rounds,
            strategy: Strategy::default(),
            topology: TopologyConfig::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            attack: AttackConfig::default(),
            ablation: AblationFlags::default(),
            lambda: default_lambda(),
            gamma: default_gamma(),
            m_per_cloud: None,
            selection_scope: SelectionScope::default(),
            eta: default_eta(),
            cosine_full: false,
            krum_f: None,
            trim_fraction: default_trim(),
            uniform_trust: false,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config("rounds must be >= 1"));
        }
        if !(self.eta > 0.0) {
            return Err(Error::config(format!("eta {} must be > 0", self.eta)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::config(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma {} must be in [0, 1)", self.gamma)));
        }
        if !(0.0..1.0).contains(&self.data.test_fraction) {
            return Err(Error::config(format!(
                "test_fraction {} must be in [0, 1)",
                self.data.test_fraction
            )));
        }
        if !(self.data.alpha > 0.0) {
            return Err(Error::config(format!(
                "alpha {} must be > 0",
                self.data.alpha
            )));
        }
        if !(0.0..0.5).contains(&self.trim_fraction) {
            return Err(Error::config(format!(
                "trim_fraction {} must be in [0, 0.5)",
                self.trim_fraction
            )));
        }
        if let Some(m) = self.m_per_cloud {
            if m == 0 {
                return Err(Error::config("m_per_cloud must be >= 1 when set"));
            }
            if m > self.topology.clients_per_cloud {
                return Err(Error::config(format!(
                    "m_per_cloud {m} exceeds clients_per_cloud {}",
                    self.topology.clients_per_cloud
                )));
            }
        }
        self.train.validate()?;
        self.attack.validate()?;
        self.topology.build()?;
        self.model_spec().validate()?;
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            feature_dim: self.data.feature_dim,
            hidden_dim: self.model.hidden_dim,
            num_classes: self.data.num_classes,
        }
    }

    /// Per-cloud participant budget: configured value or `ceil(n_k / 2)`.
    pub fn participants_per_cloud(&self) -> usize {
        self.m_per_cloud
            .unwrap_or_else(|| self.topology.clients_per_cloud.div_ceil(2))
    }

    pub fn num_clients(&self) -> usize {
        self.topology.num_clouds * self.topology.clients_per_cloud
    }

    /// Transferred model size in GB at [`BYTES_PER_PARAM`].
    pub fn model_size_gb(&self) -> f64 {
        self.model_spec().param_count() as f64 * BYTES_PER_PARAM / 1e9
    }

    pub fn cosine_scope(&self) -> CosineScope {
        if self.cosine_full {
            CosineScope::Full
        } else {
            CosineScope::LastLayer
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::AttackKind;

    #[test]
    fn minimal_toml_parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml_str("seed = 7\nrounds = 3\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.rounds, 3);
        assert_eq!(cfg.strategy, Strategy::CostTrustFl);
        assert_eq!(cfg.lambda, 0.3);
        assert_eq!(cfg.gamma, 0.9);
        assert_eq!(cfg.participants_per_cloud(), 15);
        assert!(cfg.ablation.shapley_weighting);
    }

    #[test]
    fn missing_required_field_names_it() {
        let err = ExperimentConfig::from_toml_str("rounds = 3\n").unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn unknown_field_is_rejected() {
        let err = ExperimentConfig::from_toml_str("seed = 1\nrounds = 1\nbogus = 2\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn nested_sections_parse() {
        let text = r#"
seed = 11
rounds = 5
strategy = "fltrust"
lambda = 1.0

[topology]
num_clouds = 2
clients_per_cloud = 4
global_home = 0
cost_accounting = "flat_eq1"

[attack]
kind = "sign_flip"
malicious_fraction = 0.25

[ablation]
trust_normalization = false
"#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.strategy, Strategy::FlTrust);
        assert_eq!(cfg.topology.num_clouds, 2);
        assert_eq!(cfg.topology.global_home, Some(0));
        assert_eq!(cfg.topology.cost_accounting, CostAccounting::FlatEq1);
        assert_eq!(cfg.attack.kind, AttackKind::SignFlip);
        assert!(!cfg.ablation.trust_normalization);
        assert!(cfg.ablation.shapley_weighting);
    }

    #[test]
    fn toml_round_trips() {
        let mut cfg = ExperimentConfig::new(3, 9);
        cfg.strategy = Strategy::Krum;
        cfg.attack.kind = AttackKind::Scale;
        cfg.m_per_cloud = Some(4);
        let text = cfg.to_toml_string();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for bad in [
            "seed = 1\nrounds = 0\n",
            "seed = 1\nrounds = 1\ngamma = 1.0\n",
            "seed = 1\nrounds = 1\nlambda = -0.5\n",
            "seed = 1\nrounds = 1\neta = 0.0\n",
            "seed = 1\nrounds = 1\n[attack]\nmalicious_fraction = 1.5\n",
            "seed = 1\nrounds = 1\n[topology]\nc_intra = 0.09\nc_cross = 0.01\n",
        ] {
            let err = ExperimentConfig::from_toml_str(bad).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{bad} gave {err:?}");
        }
    }
}
