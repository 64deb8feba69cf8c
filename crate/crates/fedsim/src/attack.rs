//! Poisoning attacks: label flipping at the data level, Gaussian noise,
//! sign flipping and scaling at the update level.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::economy::CloudTopology;
use crate::error::{Error, Result};
use crate::linalg::ParameterVector;
use crate::seed::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    #[default]
    None,
    LabelFlip,
    Gaussian,
    SignFlip,
    Scale,
}

impl AttackKind {
    pub fn is_update_attack(self) -> bool {
        matches!(self, AttackKind::Gaussian | AttackKind::SignFlip | AttackKind::Scale)
    }

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::LabelFlip => "label_flip",
            AttackKind::Gaussian => "gaussian",
            AttackKind::SignFlip => "sign_flip",
            AttackKind::Scale => "scale",
        }
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AttackKind::None),
            "label_flip" => Ok(AttackKind::LabelFlip),
            "gaussian" => Ok(AttackKind::Gaussian),
            "sign_flip" => Ok(AttackKind::SignFlip),
            "scale" => Ok(AttackKind::Scale),
            other => Err(Error::config(format!(
                "unknown attack `{other}` (expected none, label_flip, gaussian, sign_flip, scale)"
            ))),
        }
    }
}

/// Attack parameters. `sigma = None` asks the orchestrator to calibrate the
/// Gaussian std to the mean benign update norm measured at round 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub sigma: Option<f64>,
    pub scale_factor: f64,
    pub malicious_fraction: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            kind: AttackKind::None,
            sigma: None,
            // Negative amplification (the model-replacement form): a group
            // of attackers scaling honest updates by a positive factor only
            // speeds up training on a smooth task, so the destructive
            // variant amplifies the negated update.
            scale_factor: -2.0,
            malicious_fraction: 0.3,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(sigma) = self.sigma {
            if !(sigma >= 0.0) {
                return Err(Error::config(format!("sigma {sigma} must be >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.malicious_fraction) {
            return Err(Error::config(format!(
                "malicious_fraction {} must be in [0, 1]",
                self.malicious_fraction
            )));
        }
        if !self.scale_factor.is_finite() {
            return Err(Error::config("scale_factor must be finite"));
        }
        Ok(())
    }
}

/// Pick `floor(fraction * N)` malicious clients uniformly at random,
/// re-sampling until at least one cloud keeps a strict benign majority
/// (the threat-model constraint). Deterministic given the seed.
pub fn assign_malicious(
    num_clients: usize,
    fraction: f64,
    topology: &CloudTopology,
    seed_value: u64,
) -> Result<BTreeSet<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::contract(format!("fraction {fraction} must be in [0, 1]")));
    }
    if num_clients != topology.num_clients() {
        return Err(Error::contract(format!(
            "num_clients {num_clients} does not match topology ({})",
            topology.num_clients()
        )));
    }
    let count = (fraction * num_clients as f64).floor() as usize;
    if count == 0 {
        return Ok(BTreeSet::new());
    }

    // Feasibility: the most favorable placement fills other clouds first,
    // then cloud k up to one short of parity.
    let feasible = (0..topology.num_clouds()).any(|k| {
        let n_k = topology.cloud_size(k);
        let cap_k = n_k.saturating_sub(n_k / 2 + 1);
        count <= num_clients - n_k + cap_k
    });
    if !feasible {
        return Err(Error::config(format!(
            "{count} malicious clients leave no cloud with a benign majority"
        )));
    }

    let mut rng = seed::rng(seed_value, &[stream::MALICIOUS]);
    let ids: Vec<usize> = (0..num_clients).collect();
    for _ in 0..100_000 {
        let mut pool = ids.clone();
        pool.shuffle(&mut rng);
        let chosen: BTreeSet<usize> = pool[..count].iter().copied().collect();
        let ok = (0..topology.num_clouds()).any(|k| {
            let n_k = topology.cloud_size(k);
            let bad = chosen.iter().filter(|&&i| topology.cloud_of(i) == k).count();
            n_k - bad > bad
        });
        if ok {
            return Ok(chosen);
        }
    }
    Err(Error::config(
        "could not sample a malicious assignment satisfying the benign-majority constraint",
    ))
}

/// A seeded random derangement of `0..num_classes` (no class maps to itself).
pub fn label_derangement(num_classes: usize, seed_value: u64) -> Result<Vec<usize>> {
    if num_classes < 2 {
        return Err(Error::config(format!(
            "label flipping needs >= 2 classes, got {num_classes}"
        )));
    }
    let mut rng = seed::rng(seed_value, &[stream::LABEL_FLIP]);
    let mut perm: Vec<usize> = (0..num_classes).collect();
    loop {
        perm.shuffle(&mut rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return Ok(perm);
        }
    }
}

/// Apply a fixed random derangement of class ids to every label; features
/// are untouched.
pub fn flip_labels(shard: &Dataset, num_classes: usize, seed_value: u64) -> Result<Dataset> {
    if num_classes != shard.num_classes() {
        return Err(Error::contract(format!(
            "num_classes {num_classes} does not match shard ({})",
            shard.num_classes()
        )));
    }
    let perm = label_derangement(num_classes, seed_value)?;
    shard.relabel(&perm)
}

/// Update-level perturbation. For `Gaussian` the config sigma must already
/// be resolved to a concrete value.
pub fn perturb_update(
    g: &ParameterVector,
    cfg: &AttackConfig,
    seed_value: u64,
) -> Result<ParameterVector> {
    match cfg.kind {
        AttackKind::Gaussian => {
            let sigma = cfg.sigma.ok_or_else(|| {
                Error::config("gaussian attack sigma is unresolved; calibrate or set it explicitly")
            })?;
            if sigma == 0.0 {
                return Ok(g.clone());
            }
            let normal = Normal::new(0.0, sigma)
                .map_err(|e| Error::config(format!("invalid gaussian sigma {sigma}: {e}")))?;
            let mut rng = seed::rng(seed_value, &[stream::ATTACK]);
            let values = g.values().iter().map(|v| v + normal.sample(&mut rng)).collect();
            ParameterVector::new(values, g.layer_map().clone())
        }
        AttackKind::SignFlip => g.scale(-1.0),
        AttackKind::Scale => g.scale(cfg.scale_factor),
        AttackKind::None | AttackKind::LabelFlip => Err(Error::contract(format!(
            "perturb_update called for non-update attack {:?}",
            cfg.kind
        ))),
    }
}
