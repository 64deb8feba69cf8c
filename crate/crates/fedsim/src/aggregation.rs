//! Aggregation rules: trust-scored aggregation with norm rescaling,
//! cross-cloud combination, and the FedAvg / Krum / trimmed-mean / median /
//! FLTrust baselines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cosine_similarity, weighted_sum, ParameterVector, EPS_NORM};

/// Aggregation strategy names accepted in configs and on the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Strategy {
    #[serde(rename = "fedavg")]
    FedAvg,
    #[serde(rename = "krum")]
    Krum,
    #[serde(rename = "trimmed_mean")]
    TrimmedMean,
    #[serde(rename = "median")]
    Median,
    #[serde(rename = "fltrust")]
    FlTrust,
    #[default]
    #[serde(rename = "cost_trustfl")]
    CostTrustFl,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::FedAvg => "fedavg",
            Strategy::Krum => "krum",
            Strategy::TrimmedMean => "trimmed_mean",
            Strategy::Median => "median",
            Strategy::FlTrust => "fltrust",
            Strategy::CostTrustFl => "cost_trustfl",
        }
    }

    pub fn all() -> [Strategy; 6] {
        [
            Strategy::FedAvg,
            Strategy::Krum,
            Strategy::TrimmedMean,
            Strategy::Median,
            Strategy::FlTrust,
            Strategy::CostTrustFl,
        ]
    }

    /// Strategies that consume a reference gradient.
    pub fn uses_reference(self) -> bool {
        matches!(self, Strategy::FlTrust | Strategy::CostTrustFl)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fedavg" => Ok(Strategy::FedAvg),
            "krum" => Ok(Strategy::Krum),
            "trimmed_mean" => Ok(Strategy::TrimmedMean),
            "median" => Ok(Strategy::Median),
            "fltrust" => Ok(Strategy::FlTrust),
            "cost_trustfl" => Ok(Strategy::CostTrustFl),
            other => Err(Error::config(format!(
                "unknown strategy `{other}` (expected fedavg, krum, trimmed_mean, median, fltrust, cost_trustfl)"
            ))),
        }
    }
}

/// Which slice the trust cosine compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CosineScope {
    /// Last-layer slices, consistent with the contribution score.
    #[default]
    LastLayer,
    /// Whole-vector cosine, kept for ablation.
    Full,
}

fn scoped(v: &ParameterVector, scope: CosineScope) -> &[f64] {
    match scope {
        CosineScope::LastLayer => v.last_layer(),
        CosineScope::Full => v.values(),
    }
}

/// Options for the trust-scored aggregation path.
#[derive(Debug, Clone, Copy)]
pub struct TrustAggOptions {
    /// Rescale each update to the reference norm before combining.
    pub normalize_updates: bool,
    pub cosine_scope: CosineScope,
}

impl Default for TrustAggOptions {
    fn default() -> Self {
        TrustAggOptions {
            normalize_updates: true,
            cosine_scope: CosineScope::LastLayer,
        }
    }
}

/// Trust score per client: `max(0, cos(g_i, g_ref)) * r_hat_i`.
pub fn trust_scores(
    updates: &[ParameterVector],
    ref_update: &ParameterVector,
    r_hat: &[f64],
    scope: CosineScope,
) -> Result<Vec<f64>> {
    if updates.len() != r_hat.len() {
        return Err(Error::contract(format!(
            "{} updates but {} reputation entries",
            updates.len(),
            r_hat.len()
        )));
    }
    if ref_update.l2_norm() <= EPS_NORM {
        return Err(Error::config("reference update has zero norm"));
    }
    let anchor = scoped(ref_update, scope);
    updates
        .iter()
        .zip(r_hat)
        .map(|(g, &r)| {
            let cos = cosine_similarity(scoped(g, scope), anchor)?;
            Ok(cos.max(0.0) * r)
        })
        .collect()
}

/// Rescale `g` to the reference norm: `(||g_ref|| / ||g||) * g` over the
/// full vector. Returns `None` for (near-)zero updates, which the caller
/// treats as trust 0 rather than an error.
pub fn normalize_update(g: &ParameterVector, g_ref: &ParameterVector) -> Option<ParameterVector> {
    let norm = g.l2_norm();
    if norm <= EPS_NORM {
        return None;
    }
    let factor = g_ref.l2_norm() / norm;
    g.scale(factor).ok()
}

/// Trust-scored intra-cloud aggregation:
/// `sum(TS_i * g~_i) / sum(TS_i)`, falling back to the reference update
/// itself when every trust score is zero (total-compromise case).
pub fn aggregate_trustfl_with(
    updates: &[ParameterVector],
    ref_update: &ParameterVector,
    r_hat: &[f64],
    opts: &TrustAggOptions,
) -> Result<ParameterVector> {
    if updates.is_empty() {
        return Err(Error::contract("aggregate over an empty update list"));
    }
    let mut ts = trust_scores(updates, ref_update, r_hat, opts.cosine_scope)?;
    let mut prepared: Vec<Option<ParameterVector>> = Vec::with_capacity(updates.len());
    for (g, t) in updates.iter().zip(ts.iter_mut()) {
        if opts.normalize_updates {
            let norm_g = normalize_update(g, ref_update);
            if norm_g.is_none() {
                *t = 0.0;
            }
            prepared.push(norm_g);
        } else {
            prepared.push(Some(g.clone()));
        }
    }
    let total: f64 = ts.iter().sum();
    if total <= 0.0 {
        return Ok(ref_update.clone());
    }
    let mut acc = ref_update.zeros_like().values().to_vec();
    for (g, &t) in prepared.iter().zip(&ts) {
        if t == 0.0 {
            continue;
        }
        let w = t / total;
        let g = g.as_ref().expect("positive trust implies a prepared update");
        for (a, x) in acc.iter_mut().zip(g.values()) {
            *a += w * x;
        }
    }
    ParameterVector::new(acc, ref_update.layer_map().clone())
}

/// Trust-scored aggregation with default options (normalization on,
/// last-layer cosine).
pub fn aggregate_trustfl(
    updates: &[ParameterVector],
    ref_update: &ParameterVector,
    r_hat: &[f64],
) -> Result<ParameterVector> {
    aggregate_trustfl_with(updates, ref_update, r_hat, &TrustAggOptions::default())
}

/// Pure FLTrust: the trust-scored rule with reputation pinned uniform.
pub fn aggregate_fltrust(
    updates: &[ParameterVector],
    ref_update: &ParameterVector,
) -> Result<ParameterVector> {
    let uniform = vec![1.0 / updates.len().max(1) as f64; updates.len()];
    aggregate_trustfl(updates, ref_update, &uniform)
}

/// Cross-cloud combination: cloud trust
/// `beta_k = max(0, cos(g_k, mean_ref)) * n_k`, normalized to sum 1; the
/// returned vector is `sum(beta_k * g_k)`. All-zero trust falls back to
/// uniform weights with a logged warning.
pub fn aggregate_crosscloud(
    cloud_updates: &[ParameterVector],
    cloud_refs: &[ParameterVector],
    cloud_sizes: &[usize],
) -> Result<(ParameterVector, Vec<f64>)> {
    if cloud_updates.is_empty() {
        return Err(Error::contract("cross-cloud aggregation needs at least one cloud"));
    }
    if cloud_updates.len() != cloud_refs.len() || cloud_updates.len() != cloud_sizes.len() {
        return Err(Error::contract(format!(
            "cross-cloud arity mismatch: {} updates, {} refs, {} sizes",
            cloud_updates.len(),
            cloud_refs.len(),
            cloud_sizes.len()
        )));
    }
    let k = cloud_refs.len() as f64;
    let mean_ref = weighted_sum(cloud_refs, &vec![1.0 / k; cloud_refs.len()])?;
    let mut beta: Vec<f64> = cloud_updates
        .iter()
        .zip(cloud_sizes)
        .map(|(g, &n)| {
            let cos = cosine_similarity(g.values(), mean_ref.values())?;
            Ok(cos.max(0.0) * n as f64)
        })
        .collect::<Result<_>>()?;
    let total: f64 = beta.iter().sum();
    if total > 0.0 {
        for b in &mut beta {
            *b /= total;
        }
    } else {
        log::warn!("all cloud trust scores are zero; falling back to uniform cloud weights");
        beta = vec![1.0 / k; cloud_updates.len()];
    }
    let combined = weighted_sum(cloud_updates, &beta)?;
    Ok((combined, beta))
}

/// Sample-count weighted mean: `sum (n_i / sum n) * g_i`.
pub fn aggregate_fedavg(
    updates: &[ParameterVector],
    sample_counts: &[usize],
) -> Result<ParameterVector> {
    if updates.is_empty() {
        return Err(Error::contract("aggregate over an empty update list"));
    }
    if updates.len() != sample_counts.len() {
        return Err(Error::contract(format!(
            "{} updates but {} sample counts",
            updates.len(),
            sample_counts.len()
        )));
    }
    let total: usize = sample_counts.iter().sum();
    if total == 0 {
        return Err(Error::contract("fedavg needs a positive total sample count"));
    }
    let weights: Vec<f64> = sample_counts
        .iter()
        .map(|&n| n as f64 / total as f64)
        .collect();
    weighted_sum(updates, &weights)
}

/// Krum: return the single update minimizing the summed squared distance to
/// its `n - f - 2` nearest neighbors; ties go to the lowest client index.
pub fn aggregate_krum(
    updates: &[ParameterVector],
    num_malicious_bound: usize,
) -> Result<ParameterVector> {
    let n = updates.len();
    let f = num_malicious_bound;
    if n < 2 * f + 3 {
        return Err(Error::config(format!(
            "krum needs at least 2f+3 = {} updates for f = {f}, got {n}",
            2 * f + 3
        )));
    }
    let neighbors = n - f - 2;
    let mut dist_sq = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = updates[i]
                .values()
                .iter()
                .zip(updates[j].values())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dist_sq[i][j] = d;
            dist_sq[j][i] = d;
        }
    }
    let mut best = 0usize;
    let mut best_score = f64::INFINITY;
    for i in 0..n {
        let mut others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist_sq[i][j]).collect();
        others.sort_by(f64::total_cmp);
        let score: f64 = others[..neighbors].iter().sum();
        if score < best_score {
            best_score = score;
            best = i;
        }
    }
    Ok(updates[best].clone())
}

/// Coordinate-wise trimmed mean: drop `floor(trim_fraction * n)` values
/// from each end of every coordinate's sorted column, average the rest.
pub fn aggregate_trimmed_mean(
    updates: &[ParameterVector],
    trim_fraction: f64,
) -> Result<ParameterVector> {
    if updates.is_empty() {
        return Err(Error::contract("aggregate over an empty update list"));
    }
    if !(0.0..0.5).contains(&trim_fraction) {
        return Err(Error::config(format!(
            "trim_fraction {trim_fraction} must be in [0, 0.5)"
        )));
    }
    let n = updates.len();
    let trim = (trim_fraction * n as f64).floor() as usize;
    if 2 * trim >= n {
        return Err(Error::config(format!(
            "trimming {trim} from each side of {n} updates leaves nothing"
        )));
    }
    let dim = updates[0].len();
    let mut out = vec![0.0; dim];
    let mut column = vec![0.0; n];
    for (coord, slot) in out.iter_mut().enumerate() {
        for (c, u) in column.iter_mut().zip(updates) {
            *c = u.values()[coord];
        }
        column.sort_by(f64::total_cmp);
        let kept = &column[trim..n - trim];
        *slot = kept.iter().sum::<f64>() / kept.len() as f64;
    }
    ParameterVector::new(out, updates[0].layer_map().clone())
}

/// Coordinate-wise median (mean of the middle two for even counts).
pub fn aggregate_median(updates: &[ParameterVector]) -> Result<ParameterVector> {
    if updates.is_empty() {
        return Err(Error::contract("aggregate over an empty update list"));
    }
    let n = updates.len();
    let dim = updates[0].len();
    let mut out = vec![0.0; dim];
    let mut column = vec![0.0; n];
    for (coord, slot) in out.iter_mut().enumerate() {
        for (c, u) in column.iter_mut().zip(updates) {
            *c = u.values()[coord];
        }
        column.sort_by(f64::total_cmp);
        *slot = if n % 2 == 0 {
            (column[n / 2 - 1] + column[n / 2]) / 2.0
        } else {
            column[n / 2]
        };
    }
    ParameterVector::new(out, updates[0].layer_map().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn pv(values: &[f64]) -> ParameterVector {
        ParameterVector::single_layer("output", values.to_vec()).unwrap()
    }

    #[test]
    fn trust_score_cases() {
        let reference = pv(&[1.0, 0.0]);
        // Aligned client: TS = r_hat.
        let ts = trust_scores(&[pv(&[2.0, 0.0])], &reference, &[0.2], CosineScope::LastLayer).unwrap();
        assert!((ts[0] - 0.2).abs() < 1e-12);
        // Sign-flipped: clamped to zero.
        let ts = trust_scores(&[pv(&[-1.0, 0.0])], &reference, &[0.9], CosineScope::LastLayer).unwrap();
        assert_eq!(ts[0], 0.0);
        // Orthogonal: zero.
        let ts = trust_scores(&[pv(&[0.0, 1.0])], &reference, &[0.9], CosineScope::LastLayer).unwrap();
        assert_eq!(ts[0], 0.0);
        // Zero reference is a configuration error.
        assert!(matches!(
            trust_scores(&[pv(&[1.0, 0.0])], &pv(&[0.0, 0.0]), &[1.0], CosineScope::LastLayer),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn normalize_update_cases() {
        let reference = pv(&[1.0, 0.0]);
        let out = normalize_update(&pv(&[6.0, 8.0]), &reference).unwrap();
        assert!((out.values()[0] - 0.6).abs() < 1e-15);
        assert!((out.values()[1] - 0.8).abs() < 1e-15);

        // Already at the reference norm: unchanged.
        let g = pv(&[0.6, 0.8]);
        let out = normalize_update(&g, &reference).unwrap();
        for (a, b) in out.values().iter().zip(g.values()) {
            assert!((a - b).abs() < 1e-15);
        }

        // Near-zero updates are excluded, not an error.
        assert!(normalize_update(&pv(&[0.0, 0.0]), &reference).is_none());
    }

    #[test]
    fn normalize_update_output_norm_within_four_ulps() {
        let mut rng = crate::seed::rng(808, &[]);
        for _ in 0..200 {
            let dim = rng.random_range(1..30);
            let g = pv(&(0..dim).map(|_| rng.random_range(-4.0..4.0)).collect::<Vec<_>>());
            let reference = pv(&(0..dim).map(|_| rng.random_range(-4.0..4.0)).collect::<Vec<_>>());
            if g.l2_norm() <= EPS_NORM || reference.l2_norm() <= EPS_NORM {
                continue;
            }
            let out = normalize_update(&g, &reference).unwrap();
            let target = reference.l2_norm();
            let got = out.l2_norm();
            let four_ulps = f64::from_bits(target.to_bits() + 4) - target;
            assert!(
                (got - target).abs() <= four_ulps,
                "norm {got} vs {target} exceeds 4 ulps ({four_ulps})"
            );
        }
    }

    #[test]
    fn scale_attack_cancels_under_normalization() {
        let reference = pv(&[1.0, 0.0]);
        let g = pv(&[0.5, 0.25]);
        let scaled = g.scale(10.0).unwrap();
        let a = normalize_update(&g, &reference).unwrap();
        let b = normalize_update(&scaled, &reference).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!(
                (x - y).abs() <= 2.0 * f64::EPSILON * x.abs().max(1.0),
                "{x} vs {y}"
            );
        }
    }

    #[test]
    fn trustfl_single_aligned_client_returns_its_normalized_update() {
        let reference = pv(&[0.0, 2.0]);
        let update = pv(&[0.0, 8.0]);
        let out = aggregate_trustfl(&[update], &reference, &[1.0]).unwrap();
        assert!((out.values()[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn trustfl_identical_clients_collapse() {
        let reference = pv(&[3.0, 4.0]);
        let update = pv(&[3.0, 4.0]);
        let out = aggregate_trustfl(&[update.clone(), update.clone()], &reference, &[0.3, 0.7]).unwrap();
        for (a, b) in out.values().iter().zip(update.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn trustfl_zeroes_out_sign_flipped_attacker() {
        // Direct evaluation of the trust rule: benign aligned client plus a
        // sign-flipped attacker; the attacker's weight is exactly 0.
        let reference = pv(&[6.0, 8.0]);
        let benign = pv(&[3.0, 4.0]);
        let attacker = benign.scale(-1.0).unwrap();
        let out = aggregate_trustfl(&[benign.clone(), attacker], &reference, &[0.5, 0.5]).unwrap();
        let expected = normalize_update(&benign, &reference).unwrap();
        assert_eq!(out.values(), expected.values());
    }

    #[test]
    fn trustfl_total_compromise_falls_back_to_reference() {
        let reference = pv(&[1.0, 0.0]);
        let attackers = vec![pv(&[-1.0, 0.0]), pv(&[-2.0, 0.0])];
        let out = aggregate_trustfl(&attackers, &reference, &[0.5, 0.5]).unwrap();
        assert_eq!(out.values(), reference.values());
    }

    #[test]
    fn trustfl_output_is_a_convex_combination() {
        let mut rng = crate::seed::rng(812, &[]);
        for _ in 0..50 {
            let dim = rng.random_range(2..10);
            let n = rng.random_range(1..6);
            let reference = pv(&(0..dim).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>());
            if reference.l2_norm() <= EPS_NORM {
                continue;
            }
            let updates: Vec<ParameterVector> = (0..n)
                .map(|_| pv(&(0..dim).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>()))
                .collect();
            let r_hat = vec![1.0 / n as f64; n];
            let out = aggregate_trustfl(&updates, &reference, &r_hat).unwrap();
            assert!(out.l2_norm() <= reference.l2_norm() + 1e-9);
        }
    }

    #[test]
    fn fltrust_matches_trustfl_with_uniform_reputation() {
        let reference = pv(&[1.0, 1.0, 0.5]);
        let updates = vec![pv(&[1.0, 0.5, 0.2]), pv(&[0.9, 1.2, 0.4]), pv(&[-1.0, -1.0, -0.5])];
        let a = aggregate_fltrust(&updates, &reference).unwrap();
        let b = aggregate_trustfl(&updates, &reference, &[1.0 / 3.0; 3]).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn fltrust_equal_cosine_clients_average() {
        // Two benign clients with identical direction: simple mean of the
        // normalized updates, which coincides with the normalized direction.
        let reference = pv(&[2.0, 0.0]);
        let updates = vec![pv(&[1.0, 0.0]), pv(&[4.0, 0.0])];
        let out = aggregate_fltrust(&updates, &reference).unwrap();
        assert!((out.values()[0] - 2.0).abs() < 1e-12);
        assert!(out.values()[1].abs() < 1e-15);
    }

    #[test]
    fn crosscloud_cases() {
        let single = aggregate_crosscloud(&[pv(&[1.0, 2.0])], &[pv(&[1.0, 1.0])], &[5]).unwrap();
        assert_eq!(single.1, vec![1.0]);
        assert_eq!(single.0.values(), &[1.0, 2.0]);

        let (out, beta) = aggregate_crosscloud(
            &[pv(&[1.0, 0.0]), pv(&[1.0, 0.0])],
            &[pv(&[1.0, 0.0]), pv(&[1.0, 0.0])],
            &[4, 4],
        )
        .unwrap();
        assert_eq!(beta, vec![0.5, 0.5]);
        assert_eq!(out.values(), &[1.0, 0.0]);

        // Anti-aligned cloud is zeroed out.
        let (out, beta) = aggregate_crosscloud(
            &[pv(&[1.0, 0.0]), pv(&[-1.0, 0.0])],
            &[pv(&[1.0, 0.0]), pv(&[1.0, 0.0])],
            &[4, 4],
        )
        .unwrap();
        assert_eq!(beta[1], 0.0);
        assert_eq!(out.values(), &[1.0, 0.0]);
    }

    #[test]
    fn fedavg_cases() {
        let out = aggregate_fedavg(&[pv(&[1.0, 0.0]), pv(&[0.0, 1.0])], &[10, 10]).unwrap();
        assert_eq!(out.values(), &[0.5, 0.5]);

        let out = aggregate_fedavg(&[pv(&[4.0, 0.0]), pv(&[0.0, 4.0])], &[3, 1]).unwrap();
        assert_eq!(out.values(), &[3.0, 1.0]);

        let single = pv(&[7.0, -2.0]);
        let out = aggregate_fedavg(std::slice::from_ref(&single), &[5]).unwrap();
        assert_eq!(out.values(), single.values());
    }

    #[test]
    fn fedavg_is_permutation_invariant() {
        let updates = [pv(&[1.0, 2.0]), pv(&[-1.0, 0.5]), pv(&[3.0, 3.0])];
        let counts = [3usize, 5, 2];
        let a = aggregate_fedavg(&updates, &counts).unwrap();
        let perm = [2usize, 0, 1];
        let pu: Vec<ParameterVector> = perm.iter().map(|&i| updates[i].clone()).collect();
        let pc: Vec<usize> = perm.iter().map(|&i| counts[i]).collect();
        let b = aggregate_fedavg(&pu, &pc).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn krum_picks_a_clustered_update() {
        let updates = vec![
            pv(&[1.0, 1.0]),
            pv(&[1.1, 0.9]),
            pv(&[0.9, 1.1]),
            pv(&[1.0, 0.95]),
            pv(&[100.0, 100.0]),
        ];
        let out = aggregate_krum(&updates, 1).unwrap();
        assert!(out.values()[0] < 2.0, "picked the outlier: {:?}", out.values());
        // Selection, not synthesis: output is one of the inputs.
        assert!(updates.iter().any(|u| u.values() == out.values()));
    }

    #[test]
    fn krum_tie_breaks_to_lowest_index() {
        let updates = vec![pv(&[1.0, 1.0]); 5];
        let out = aggregate_krum(&updates, 1).unwrap();
        assert_eq!(out.values(), updates[0].values());
    }

    #[test]
    fn krum_size_guard() {
        let updates = vec![pv(&[1.0]); 4];
        assert!(matches!(aggregate_krum(&updates, 1), Err(Error::Config(_))));
        // N=5, f=1 works and scores over N-f-2 = 2 neighbors.
        let updates = vec![pv(&[1.0]); 5];
        assert!(aggregate_krum(&updates, 1).is_ok());
    }

    #[test]
    fn trimmed_mean_cases() {
        let updates = vec![pv(&[1.0]), pv(&[2.0]), pv(&[3.0]), pv(&[4.0]), pv(&[100.0])];
        let out = aggregate_trimmed_mean(&updates, 0.2).unwrap();
        assert_eq!(out.values(), &[3.0]);

        // trim_fraction = 0 reduces to the plain mean.
        let out = aggregate_trimmed_mean(&updates, 0.0).unwrap();
        assert_eq!(out.values(), &[22.0]);

        let identical = vec![pv(&[5.0, -1.0]); 4];
        let out = aggregate_trimmed_mean(&identical, 0.25).unwrap();
        assert_eq!(out.values(), &[5.0, -1.0]);
    }

    #[test]
    fn trimmed_mean_ignores_single_outlier_per_side() {
        let mut rng = crate::seed::rng(850, &[]);
        for _ in 0..20 {
            let n = 6;
            let mut updates: Vec<ParameterVector> = (0..n)
                .map(|_| pv(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]))
                .collect();
            // floor(0.2 * 6) = 1 trimmed per side: one huge value is absorbed.
            updates[3] = pv(&[1e12, -1e12]);
            let poisoned = aggregate_trimmed_mean(&updates, 0.2).unwrap();
            let sorted_cols = |coord: usize| {
                let mut col: Vec<f64> = updates.iter().map(|u| u.values()[coord]).collect();
                col.sort_by(f64::total_cmp);
                col
            };
            // The poisoned run must stay within the clean coordinate range.
            for coord in 0..2 {
                let col = sorted_cols(coord);
                assert!(poisoned.values()[coord] >= col[0] && poisoned.values()[coord] <= col[n - 1]);
            }
        }
    }

    #[test]
    fn median_cases() {
        let out = aggregate_median(&[pv(&[1.0]), pv(&[2.0]), pv(&[100.0])]).unwrap();
        assert_eq!(out.values(), &[2.0]);

        let out = aggregate_median(&[pv(&[1.0]), pv(&[3.0])]).unwrap();
        assert_eq!(out.values(), &[2.0]);
    }

    #[test]
    fn median_bounded_by_coordinate_extremes() {
        let mut rng = crate::seed::rng(860, &[]);
        for _ in 0..30 {
            let n = rng.random_range(1..8);
            let updates: Vec<ParameterVector> = (0..n)
                .map(|_| pv(&[rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0)]))
                .collect();
            let out = aggregate_median(&updates).unwrap();
            for coord in 0..2 {
                let lo = updates.iter().map(|u| u.values()[coord]).fold(f64::INFINITY, f64::min);
                let hi = updates.iter().map(|u| u.values()[coord]).fold(f64::NEG_INFINITY, f64::max);
                assert!(out.values()[coord] >= lo && out.values()[coord] <= hi);
            }
        }
    }

    #[test]
    fn degenerate_hierarchy_reduces_to_fedavg() {
        // K=1 with uniform trust (equal cosines, uniform reputation) and
        // updates already at the reference norm: the trust pipeline output
        // equals equal-count FedAvg, and the cross-cloud step is identity.
        let updates = vec![pv(&[0.6, 0.8]), pv(&[0.6, -0.8])];
        let reference = pv(&[1.0, 0.0]);
        let trusted = aggregate_trustfl(&updates, &reference, &[0.5, 0.5]).unwrap();
        let fedavg = aggregate_fedavg(&updates, &[1, 1]).unwrap();
        for (a, b) in trusted.values().iter().zip(fedavg.values()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        let (cross, beta) = aggregate_crosscloud(&[trusted.clone()], &[reference], &[2]).unwrap();
        assert_eq!(beta, vec![1.0]);
        assert_eq!(cross.values(), trusted.values());
    }
}
