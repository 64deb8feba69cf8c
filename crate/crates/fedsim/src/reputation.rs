//! Lightweight contribution scoring and the Shapley oracles used to
//! validate it.
//!
//! The per-round contribution of a client is the ReLU-clamped cosine of its
//! last-layer update against the round mean, times the last-layer magnitude.
//! Scores are normalized into reputations and smoothed with an EMA across
//! rounds. Exact and Monte Carlo Shapley values over an arbitrary
//! characteristic function provide the ground truth the cheap score is
//! checked against.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::linalg::{cosine_similarity, l2_norm, weighted_sum, ParameterVector};
use crate::seed::{self, stream};

/// Hard cap for exhaustive Shapley enumeration (2^16 subsets).
pub const EXACT_SHAPLEY_MAX_CLIENTS: usize = 16;

/// Per-client reputation state carried across rounds.
#[derive(Debug, Clone)]
pub struct ReputationState {
    /// Current-round contribution scores.
    pub phi: Vec<f64>,
    /// Current-round normalized reputations.
    pub r: Vec<f64>,
    /// EMA-smoothed reputations; initialized uniform and kept summing to 1.
    pub r_hat: Vec<f64>,
    pub gamma: f64,
}

impl ReputationState {
    pub fn new(num_clients: usize, gamma: f64) -> Result<Self> {
        if num_clients == 0 {
            return Err(Error::contract("reputation state needs at least one client"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::config(format!("gamma {gamma} must be in [0, 1)")));
        }
        let uniform = 1.0 / num_clients as f64;
        Ok(ReputationState {
            phi: vec![0.0; num_clients],
            r: vec![uniform; num_clients],
            r_hat: vec![uniform; num_clients],
            gamma,
        })
    }

    pub fn num_clients(&self) -> usize {
        self.r_hat.len()
    }

    /// EMA step: `r_hat <- gamma * r_hat + (1 - gamma) * r_new`.
    pub fn ema_update(&mut self, r_new: &[f64]) -> Result<()> {
        if r_new.len() != self.r_hat.len() {
            return Err(Error::contract(format!(
                "r_new has {} entries for {} clients",
                r_new.len(),
                self.r_hat.len()
            )));
        }
        for (h, &r) in self.r_hat.iter_mut().zip(r_new) {
            *h = self.gamma * *h + (1.0 - self.gamma) * r;
        }
        self.r = r_new.to_vec();
        Ok(())
    }
}

/// Gradient contribution scores over one round's updates: for each update,
/// `relu(cos(g_i_last, mean_last)) * ||g_i_last||` using last-layer slices
/// of the unweighted mean.
pub fn contribution_scores(updates: &[ParameterVector]) -> Result<Vec<f64>> {
    if updates.is_empty() {
        return Err(Error::contract("contribution_scores over an empty update list"));
    }
    let n = updates.len() as f64;
    let mean = weighted_sum(updates, &vec![1.0 / n; updates.len()])?;
    let mean_last = mean.last_layer();
    updates
        .iter()
        .map(|g| {
            let last = g.last_layer();
            let cos = cosine_similarity(last, mean_last)?;
            Ok(cos.max(0.0) * l2_norm(last))
        })
        .collect()
}

/// Normalize scores into reputations `r_i = phi_i / sum(phi)`; an all-zero
/// round falls back to uniform.
pub fn normalize(phi: &[f64]) -> Vec<f64> {
    debug_assert!(phi.iter().all(|&p| p >= 0.0), "negative contribution score");
    let total: f64 = phi.iter().sum();
    if total > 0.0 {
        phi.iter().map(|p| p / total).collect()
    } else {
        vec![1.0 / phi.len() as f64; phi.len()]
    }
}

/// Exact Shapley values of `v` over `num_clients <= 16` players.
///
/// `v` takes a bitmask subset (bit i set means client i present). Every
/// subset is evaluated once, in mask order, so the computation is
/// deterministic and `v(empty)` is evaluated exactly once.
pub fn exact_shapley<F: FnMut(u64) -> f64>(
    mut characteristic: F,
    num_clients: usize,
) -> Result<Vec<f64>> {
    if num_clients == 0 {
        return Err(Error::contract("exact_shapley needs at least one client"));
    }
    if num_clients > EXACT_SHAPLEY_MAX_CLIENTS {
        return Err(Error::config(format!(
            "exact_shapley is capped at {EXACT_SHAPLEY_MAX_CLIENTS} clients (got {num_clients}); \
             use monte_carlo_shapley instead"
        )));
    }
    let n = num_clients;
    let full: u64 = (1u64 << n) - 1;
    let mut values = vec![0.0; (full + 1) as usize];
    for mask in 0..=full {
        values[mask as usize] = characteristic(mask);
    }

    let mut factorial = vec![1.0f64; n + 1];
    for k in 1..=n {
        factorial[k] = factorial[k - 1] * k as f64;
    }
    let n_fact = factorial[n];

    let mut shapley = vec![0.0; n];
    for (i, phi) in shapley.iter_mut().enumerate() {
        let bit = 1u64 << i;
        let mut acc = 0.0;
        for mask in 0..=full {
            if mask & bit != 0 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let weight = factorial[s] * factorial[n - s - 1] / n_fact;
            acc += weight * (values[(mask | bit) as usize] - values[mask as usize]);
        }
        *phi = acc;
    }
    Ok(shapley)
}

/// Permutation-sampling Shapley estimator: walks `num_permutations` seeded
/// random orders accumulating marginal contributions. Deterministic given
/// the seed.
pub fn monte_carlo_shapley<F: FnMut(u64) -> f64>(
    mut characteristic: F,
    num_clients: usize,
    num_permutations: usize,
    seed_value: u64,
) -> Result<Vec<f64>> {
    if num_clients == 0 || num_clients > 63 {
        return Err(Error::contract(format!(
            "monte_carlo_shapley supports 1..=63 clients, got {num_clients}"
        )));
    }
    if num_permutations == 0 {
        return Err(Error::contract("num_permutations must be >= 1"));
    }
    let mut rng = seed::rng(seed_value, &[stream::SHAPLEY]);
    let empty_value = characteristic(0);
    let mut order: Vec<usize> = (0..num_clients).collect();
    let mut acc = vec![0.0; num_clients];
    for _ in 0..num_permutations {
        order.shuffle(&mut rng);
        let mut mask = 0u64;
        let mut prev = empty_value;
        for &client in &order {
            mask |= 1 << client;
            let cur = characteristic(mask);
            acc[client] += cur - prev;
            prev = cur;
        }
    }
    let inv = 1.0 / num_permutations as f64;
    for a in &mut acc {
        *a *= inv;
    }
    Ok(acc)
}

/// Pearson correlation coefficient between two score vectors.
pub fn shapley_correlation(approx: &[f64], exact: &[f64]) -> Result<f64> {
    if approx.len() != exact.len() {
        return Err(Error::contract(format!(
            "correlation length mismatch: {} vs {}",
            approx.len(),
            exact.len()
        )));
    }
    if approx.len() < 3 {
        return Err(Error::contract("correlation needs at least 3 points"));
    }
    let n = approx.len() as f64;
    let mean_a: f64 = approx.iter().sum::<f64>() / n;
    let mean_e: f64 = exact.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_e = 0.0;
    for (a, e) in approx.iter().zip(exact) {
        let da = a - mean_a;
        let de = e - mean_e;
        cov += da * de;
        var_a += da * da;
        var_e += de * de;
    }
    if var_a == 0.0 || var_e == 0.0 {
        return Err(Error::contract(
            "correlation undefined for a constant input vector",
        ));
    }
    Ok((cov / (var_a.sqrt() * var_e.sqrt())).clamp(-1.0, 1.0))
}
