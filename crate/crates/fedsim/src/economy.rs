//! Multi-cloud cost model, cumulative cost ledger, and cost-aware client
//! selection.
//!
//! Transfers are priced per link: anything staying inside one cloud costs
//! `c_intra` per size unit, anything crossing cloud boundaries costs
//! `c_cross`. A round charges one uplink leg per selected client plus one
//! edge-to-global leg per participating cloud; `CostAccounting::FlatEq1`
//! instead prices each client leg relative to the global aggregator's home
//! cloud and drops the edge legs (the flat single-aggregator accounting).

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which legs a round charges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CostAccounting {
    /// Client-to-edge legs at `c_intra` plus one edge-to-global leg per
    /// participating cloud.
    #[default]
    Hierarchical,
    /// Per-client legs priced against the global aggregator's home cloud,
    /// no edge legs.
    FlatEq1,
}

/// Clouds, client assignment, and per-link prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudTopology {
    num_clouds: usize,
    client_cloud: Vec<usize>,
    c_intra: f64,
    c_cross: f64,
    /// Cloud hosting the global aggregator; `None` places it outside every
    /// cloud, making all edge legs cross-cloud.
    global_home: Option<usize>,
    #[serde(default)]
    accounting: CostAccounting,
    /// Charge the broadcast (downlink) legs symmetrically with uplink.
    #[serde(default)]
    charge_downlink: bool,
}

impl CloudTopology {
    pub fn new(
        client_cloud: Vec<usize>,
        num_clouds: usize,
        c_intra: f64,
        c_cross: f64,
        global_home: Option<usize>,
    ) -> Result<Self> {
        if num_clouds == 0 {
            return Err(Error::config("topology needs at least one cloud"));
        }
        if client_cloud.is_empty() {
            return Err(Error::config("topology needs at least one client"));
        }
        if let Some(&bad) = client_cloud.iter().find(|&&c| c >= num_clouds) {
            return Err(Error::config(format!(
                "client assigned to cloud {bad}, only {num_clouds} clouds exist"
            )));
        }
        if let Some(home) = global_home {
            if home >= num_clouds {
                return Err(Error::config(format!(
                    "global aggregator home {home} is not a valid cloud"
                )));
            }
        }
        if !(c_intra >= 0.0) || !(c_cross >= 0.0) {
            return Err(Error::config("prices must be non-negative"));
        }
        if c_cross < c_intra {
            return Err(Error::config(format!(
                "c_cross {c_cross} must be >= c_intra {c_intra}"
            )));
        }
        Ok(CloudTopology {
            num_clouds,
            client_cloud,
            c_intra,
            c_cross,
            global_home,
            accounting: CostAccounting::default(),
            charge_downlink: false,
        })
    }

    /// `num_clouds` clouds of `per_cloud` clients each, ids cloud-major.
    pub fn uniform(
        num_clouds: usize,
        per_cloud: usize,
        c_intra: f64,
        c_cross: f64,
        global_home: Option<usize>,
    ) -> Result<Self> {
        let client_cloud = (0..num_clouds * per_cloud)
            .map(|i| i / per_cloud.max(1))
            .collect();
        CloudTopology::new(client_cloud, num_clouds, c_intra, c_cross, global_home)
    }

    pub fn with_accounting(mut self, accounting: CostAccounting) -> Self {
        self.accounting = accounting;
        self
    }

    pub fn with_charge_downlink(mut self, on: bool) -> Self {
        self.charge_downlink = on;
        self
    }

    pub fn num_clouds(&self) -> usize {
        self.num_clouds
    }

    pub fn num_clients(&self) -> usize {
        self.client_cloud.len()
    }

    pub fn cloud_of(&self, client: usize) -> usize {
        self.client_cloud[client]
    }

    pub fn clients_of(&self, cloud: usize) -> Vec<usize> {
        (0..self.num_clients())
            .filter(|&i| self.client_cloud[i] == cloud)
            .collect()
    }

    pub fn cloud_size(&self, cloud: usize) -> usize {
        self.client_cloud.iter().filter(|&&c| c == cloud).count()
    }

    pub fn c_intra(&self) -> f64 {
        self.c_intra
    }

    pub fn c_cross(&self) -> f64 {
        self.c_cross
    }

    pub fn global_home(&self) -> Option<usize> {
        self.global_home
    }

    pub fn accounting(&self) -> CostAccounting {
        self.accounting
    }

    /// Price of the client-to-edge uplink leg. Every client reports to the
    /// edge aggregator inside its own cloud, so this is always `c_intra`.
    pub fn client_cost(&self, _client: usize) -> f64 {
        self.c_intra
    }

    /// Price of cloud `k`'s edge-to-global leg.
    pub fn cloud_leg_cost(&self, cloud: usize) -> f64 {
        if self.global_home == Some(cloud) {
            self.c_intra
        } else {
            self.c_cross
        }
    }

    /// Cost of routing client `i`'s update all the way to the global
    /// aggregator: the cross-cloud exposure used by cost-aware selection.
    pub fn selection_cost(&self, client: usize) -> f64 {
        self.cloud_leg_cost(self.cloud_of(client))
    }
}

/// One round's communication cost, split into intra- and cross-cloud parts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RoundCost {
    pub total: f64,
    pub intra: f64,
    pub cross: f64,
}

/// Communication cost of one round for `selected` clients moving
/// `model_size` size-units each (the caller picks the unit: parameter
/// count, or GB after a bytes-per-parameter conversion).
pub fn round_cost(selected: &[usize], model_size: f64, topology: &CloudTopology) -> Result<RoundCost> {
    if !(model_size > 0.0) {
        return Err(Error::contract(format!("model_size {model_size} must be > 0")));
    }
    let mut intra = 0.0;
    let mut cross = 0.0;
    match topology.accounting {
        CostAccounting::Hierarchical => {
            let mut participating = vec![false; topology.num_clouds()];
            for &i in selected {
                intra += model_size * topology.client_cost(i);
                participating[topology.cloud_of(i)] = true;
            }
            for (cloud, active) in participating.iter().enumerate() {
                if !active {
                    continue;
                }
                let leg = model_size * topology.cloud_leg_cost(cloud);
                if topology.global_home == Some(cloud) {
                    intra += leg;
                } else {
                    cross += leg;
                }
            }
        }
        CostAccounting::FlatEq1 => {
            for &i in selected {
                let leg = model_size * topology.selection_cost(i);
                if topology.global_home == Some(topology.cloud_of(i)) {
                    intra += leg;
                } else {
                    cross += leg;
                }
            }
        }
    }
    let mut cost = RoundCost {
        total: intra + cross,
        intra,
        cross,
    };
    if topology.charge_downlink {
        cost.total *= 2.0;
        cost.intra *= 2.0;
        cost.cross *= 2.0;
    }
    Ok(cost)
}

/// Greedy top-`m` of `candidates` by `r_hat_i / selection_cost_i^lambda`,
/// ties broken by lower client id. `lambda = 0` ranks by reputation alone;
/// `lambda = 1` is the reputation-per-cost rule. Deterministic.
pub fn select_clients(
    r_hat: &[f64],
    topology: &CloudTopology,
    candidates: &[usize],
    m: usize,
    lambda: f64,
) -> Result<Vec<usize>> {
    if !(lambda >= 0.0) {
        return Err(Error::config(format!("lambda {lambda} must be >= 0")));
    }
    if m > candidates.len() {
        return Err(Error::config(format!(
            "cannot select {m} clients from {} candidates",
            candidates.len()
        )));
    }
    if let Some(&bad) = candidates.iter().find(|&&i| i >= r_hat.len()) {
        return Err(Error::contract(format!(
            "candidate {bad} has no reputation entry (len {})",
            r_hat.len()
        )));
    }
    let mut scored: Vec<(usize, f64)> = candidates
        .iter()
        .map(|&i| {
            let denom = topology.selection_cost(i).powf(lambda);
            let score = if denom > 0.0 {
                r_hat[i] / denom
            } else if r_hat[i] > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            (i, score)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut selected: Vec<usize> = scored[..m].iter().map(|&(i, _)| i).collect();
    selected.sort_unstable();
    Ok(selected)
}

/// Uniform random selection of `m` of `candidates` (the cost-unaware
/// baseline), returned sorted.
pub fn select_random<R: Rng>(candidates: &[usize], m: usize, rng: &mut R) -> Result<Vec<usize>> {
    if m > candidates.len() {
        return Err(Error::config(format!(
            "cannot select {m} clients from {} candidates",
            candidates.len()
        )));
    }
    let mut pool = candidates.to_vec();
    pool.shuffle(rng);
    let mut selected: Vec<usize> = pool[..m].to_vec();
    selected.sort_unstable();
    Ok(selected)
}

/// Per-round costs and their running total.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CostLedger {
    pub per_round: Vec<f64>,
    pub cumulative: f64,
    pub breakdown: Vec<(f64, f64)>,
}

impl CostLedger {
    pub fn new() -> Self {
        CostLedger::default()
    }

    pub fn record_round(&mut self, cost: &RoundCost) {
        self.per_round.push(cost.total);
        self.cumulative += cost.total;
        self.breakdown.push((cost.intra, cost.cross));
    }

    pub fn rounds(&self) -> usize {
        self.per_round.len()
    }
}
