//! Synthetic datasets, Dirichlet non-IID partitioning, and reference-shard
//! carving for edge aggregators.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::economy::CloudTopology;
use crate::error::{Error, Result};
use crate::seed::{self, stream};

/// Standard deviation of the per-coordinate Gaussian noise around class
/// centers, and the radius at which centers are placed.
pub const BLOB_SIGMA: f64 = 1.0;
pub const BLOB_CENTER_RADIUS: f64 = 4.0;

/// In-memory classification dataset: row-major features plus integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    feature_dim: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        feature_dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if feature_dim == 0 || num_classes == 0 {
            return Err(Error::contract("feature_dim and num_classes must be positive"));
        }
        if features.len() != labels.len() * feature_dim {
            return Err(Error::contract(format!(
                "feature buffer holds {} values but {} rows x {} dims expected",
                features.len(),
                labels.len(),
                feature_dim
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::contract(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            feature_dim,
            num_classes,
        })
    }

    pub fn empty(feature_dim: usize, num_classes: usize) -> Self {
        Dataset {
            features: Vec::new(),
            labels: Vec::new(),
            feature_dim,
            num_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// New dataset containing the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.feature_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            labels,
            feature_dim: self.feature_dim,
            num_classes: self.num_classes,
        }
    }

    /// Same rows with labels rewritten through `perm` (perm[c] replaces c).
    pub fn relabel(&self, perm: &[usize]) -> Result<Dataset> {
        if perm.len() != self.num_classes {
            return Err(Error::contract(format!(
                "permutation has {} entries for {} classes",
                perm.len(),
                self.num_classes
            )));
        }
        let labels = self.labels.iter().map(|&l| perm[l]).collect();
        Dataset::new(self.features.clone(), labels, self.feature_dim, self.num_classes)
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Shannon entropy (nats) of the empirical label distribution.
    pub fn label_entropy(&self) -> f64 {
        let n = self.len() as f64;
        if n == 0.0 {
            return 0.0;
        }
        self.class_counts()
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    }
}

/// One dataset per client plus one reference shard per cloud.
#[derive(Debug, Clone)]
pub struct FederatedSplit {
    pub client_shards: Vec<Dataset>,
    pub reference_shards: Vec<Dataset>,
}

/// Result of a Dirichlet partition; clients left without samples are legal
/// at extreme alpha and flagged here.
#[derive(Debug, Clone)]
pub struct Partition {
    pub shards: Vec<Dataset>,
    pub zero_sample_clients: Vec<usize>,
}

/// Gaussian class blobs: class c is drawn from N(mu_c, sigma^2 I) with
/// mu_c a seeded random direction scaled to [`BLOB_CENTER_RADIUS`].
/// Rows are ordered class-major; identical inputs give identical bytes.
pub fn generate_synthetic(
    num_classes: usize,
    samples_per_class: usize,
    feature_dim: usize,
    seed: u64,
) -> Result<Dataset> {
    if num_classes == 0 || samples_per_class == 0 || feature_dim == 0 {
        return Err(Error::contract("all synthetic dataset counts must be positive"));
    }
    let mut rng = seed::rng(seed, &[stream::DATA]);
    let mut centers = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        let mut c: Vec<f64> = (0..feature_dim)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        let norm = crate::linalg::l2_norm(&c);
        if norm > 0.0 {
            for x in &mut c {
                *x *= BLOB_CENTER_RADIUS / norm;
            }
        }
        centers.push(c);
    }
    let mut features = Vec::with_capacity(num_classes * samples_per_class * feature_dim);
    let mut labels = Vec::with_capacity(num_classes * samples_per_class);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..samples_per_class {
            for &mu in center {
                let noise: f64 = StandardNormal.sample(&mut rng);
                features.push(mu + BLOB_SIGMA * noise);
            }
            labels.push(class);
        }
    }
    Dataset::new(features, labels, feature_dim, num_classes)
}

/// Class-stratified train/test split; `test_fraction` of each class
/// (floored) is held out. Returns (train, test).
pub fn stratified_split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::config(format!(
            "test_fraction {test_fraction} must be in [0, 1)"
        )));
    }
    let mut rng = seed::rng(seed, &[stream::SPLIT]);
    let mut test_idx = Vec::new();
    let mut train_idx = Vec::new();
    for class in 0..data.num_classes {
        let mut members: Vec<usize> = (0..data.len()).filter(|&i| data.label(i) == class).collect();
        members.shuffle(&mut rng);
        let n_test = (members.len() as f64 * test_fraction).floor() as usize;
        test_idx.extend_from_slice(&members[..n_test]);
        train_idx.extend_from_slice(&members[n_test..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((data.select(&train_idx), data.select(&test_idx)))
}

/// Dirichlet non-IID partition: for each class a proportion vector
/// p ~ Dir(alpha * 1) over clients splits that class's samples. Counts come
/// from largest-remainder apportionment of the sampled proportions, so every
/// sample is assigned exactly once.
pub fn dirichlet_partition(
    data: &Dataset,
    num_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<Partition> {
    if num_clients == 0 {
        return Err(Error::contract("num_clients must be >= 1"));
    }
    if !(alpha > 0.0) {
        return Err(Error::contract(format!("alpha {alpha} must be > 0")));
    }
    let counts = data.class_counts();
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::contract(format!(
            "class {empty} has no samples; every class needs at least one"
        )));
    }
    let mut rng = seed::rng(seed, &[stream::PARTITION]);
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| Error::config(format!("invalid Dirichlet alpha {alpha}: {e}")))?;

    let mut per_client: Vec<Vec<usize>> = vec![Vec::new(); num_clients];
    for class in 0..data.num_classes {
        let mut members: Vec<usize> = (0..data.len()).filter(|&i| data.label(i) == class).collect();
        members.shuffle(&mut rng);

        let draws: Vec<f64> = (0..num_clients).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        let props: Vec<f64> = if total > 0.0 {
            draws.iter().map(|d| d / total).collect()
        } else {
            vec![1.0 / num_clients as f64; num_clients]
        };

        let quotas = apportion(members.len(), &props);
        let mut offset = 0;
        for (client, &q) in quotas.iter().enumerate() {
            per_client[client].extend_from_slice(&members[offset..offset + q]);
            offset += q;
        }
    }

    let mut shards = Vec::with_capacity(num_clients);
    let mut zero_sample_clients = Vec::new();
    for (client, mut idx) in per_client.into_iter().enumerate() {
        idx.sort_unstable();
        if idx.is_empty() {
            zero_sample_clients.push(client);
        }
        shards.push(data.select(&idx));
    }
    Ok(Partition {
        shards,
        zero_sample_clients,
    })
}

/// Largest-remainder apportionment of `total` items by `props` (summing to
/// ~1). Ties go to the lower index, making the split deterministic.
fn apportion(total: usize, props: &[f64]) -> Vec<usize> {
    let mut quotas: Vec<usize> = props
        .iter()
        .map(|p| (p * total as f64).floor() as usize)
        .collect();
    let assigned: usize = quotas.iter().sum();
    let mut remainders: Vec<(usize, f64)> = props
        .iter()
        .enumerate()
        .map(|(i, p)| (i, p * total as f64 - quotas[i] as f64))
        .collect();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for k in 0..total - assigned {
        quotas[remainders[k].0] += 1;
    }
    quotas
}

/// Remove `reference_size` class-stratified samples from each cloud's
/// clients to form that cloud's reference shard; the rest stay put.
pub fn carve_reference(
    shards: &[Dataset],
    topology: &CloudTopology,
    reference_size: usize,
    seed: u64,
) -> Result<FederatedSplit> {
    if shards.len() != topology.num_clients() {
        return Err(Error::contract(format!(
            "{} shards for a topology of {} clients",
            shards.len(),
            topology.num_clients()
        )));
    }
    if shards.is_empty() {
        return Err(Error::contract("carve_reference needs at least one shard"));
    }
    let feature_dim = shards[0].feature_dim();
    let num_classes = shards[0].num_classes();

    let mut client_keep: Vec<Vec<usize>> = shards.iter().map(|s| (0..s.len()).collect()).collect();
    let mut reference_shards = Vec::with_capacity(topology.num_clouds());

    for cloud in 0..topology.num_clouds() {
        let mut rng = seed::rng(seed, &[stream::REFERENCE, cloud as u64]);
        let clients = topology.clients_of(cloud);

        // Pool of (client, row) per class, clients in id order.
        let mut pools: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_classes];
        for &c in &clients {
            for row in 0..shards[c].len() {
                pools[shards[c].label(row)].push((c, row));
            }
        }
        let available: usize = pools.iter().map(|p| p.len()).sum();
        if available < reference_size {
            return Err(Error::config(format!(
                "cloud {cloud} holds {available} samples, fewer than reference_size {reference_size}"
            )));
        }
        for pool in &mut pools {
            pool.shuffle(&mut rng);
        }

        // Even per-class quotas, then redistribute shortfalls where classes
        // run out (stratified "where possible").
        let uniform = vec![1.0 / num_classes as f64; num_classes];
        let mut quotas = apportion(reference_size, &uniform);
        loop {
            let mut deficit = 0;
            for (class, quota) in quotas.iter_mut().enumerate() {
                if *quota > pools[class].len() {
                    deficit += *quota - pools[class].len();
                    *quota = pools[class].len();
                }
            }
            if deficit == 0 {
                break;
            }
            let mut placed = false;
            for (class, quota) in quotas.iter_mut().enumerate() {
                while deficit > 0 && *quota < pools[class].len() {
                    *quota += 1;
                    deficit -= 1;
                    placed = true;
                }
            }
            debug_assert!(placed, "deficit with spare capacity available");
            if deficit == 0 || !placed {
                break;
            }
        }

        let mut taken: Vec<(usize, usize)> = Vec::with_capacity(reference_size);
        for (class, &quota) in quotas.iter().enumerate() {
            taken.extend_from_slice(&pools[class][..quota]);
        }
        for &(client, row) in &taken {
            client_keep[client].retain(|&r| r != row);
        }

        let mut features = Vec::with_capacity(taken.len() * feature_dim);
        let mut labels = Vec::with_capacity(taken.len());
        for &(client, row) in &taken {
            features.extend_from_slice(shards[client].row(row));
            labels.push(shards[client].label(row));
        }
        reference_shards.push(Dataset::new(features, labels, feature_dim, num_classes)?);
    }

    let client_shards = shards
        .iter()
        .zip(&client_keep)
        .map(|(s, keep)| s.select(keep))
        .collect();
    Ok(FederatedSplit {
        client_shards,
        reference_shards,
    })
}

/// Read a dataset from the columnar text format documented in the README:
/// a header line `feature_dim,num_classes`, then one sample per line as
/// `f_0,...,f_{feature_dim-1},label`.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::config(format!("{}: empty dataset file", path.display())))?;
    let header = header.map_err(|e| Error::io(path.display().to_string(), e))?;
    let head: Vec<&str> = header.trim().split(',').collect();
    if head.len() != 2 {
        return Err(Error::config(format!(
            "{}:1: header must be `feature_dim,num_classes`",
            path.display()
        )));
    }
    let feature_dim: usize = head[0]
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("{}:1: bad feature_dim `{}`", path.display(), head[0])))?;
    let num_classes: usize = head[1]
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("{}:1: bad num_classes `{}`", path.display(), head[1])))?;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != feature_dim + 1 {
            return Err(Error::config(format!(
                "{}:{lineno}: expected {} fields, found {}",
                path.display(),
                feature_dim + 1,
                fields.len()
            )));
        }
        for f in &fields[..feature_dim] {
            let v: f64 = f.trim().parse().map_err(|_| {
                Error::config(format!("{}:{lineno}: bad feature value `{f}`", path.display()))
            })?;
            features.push(v);
        }
        let label: usize = fields[feature_dim].trim().parse().map_err(|_| {
            Error::config(format!(
                "{}:{lineno}: bad label `{}`",
                path.display(),
                fields[feature_dim]
            ))
        })?;
        if label >= num_classes {
            return Err(Error::config(format!(
                "{}:{lineno}: label {label} out of range for {num_classes} classes",
                path.display()
            )));
        }
        labels.push(label);
    }
    Dataset::new(features, labels, feature_dim, num_classes)
}

/// Write a dataset in the same columnar format `read_dataset` accepts.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?,
    );
    let write = |out: &mut dyn Write, s: String| -> Result<()> {
        out.write_all(s.as_bytes())
            .map_err(|e| Error::io(path.display().to_string(), e))
    };
    write(&mut out, format!("{},{}\n", data.feature_dim(), data.num_classes()))?;
    for i in 0..data.len() {
        let mut line = String::new();
        for v in data.row(i) {
            line.push_str(&format!("{v},"));
        }
        line.push_str(&format!("{}\n", data.label(i)));
        write(&mut out, line)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::economy::CloudTopology;

    #[test]
    fn synthetic_is_balanced_and_deterministic() {
        let a = generate_synthetic(10, 100, 32, 1).unwrap();
        assert_eq!(a.len(), 1000);
        assert!(a.class_counts().iter().all(|&c| c == 100));
        let b = generate_synthetic(10, 100, 32, 1).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(10, 100, 32, 2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn single_client_partition_gets_everything() {
        let data = generate_synthetic(3, 10, 4, 5).unwrap();
        let part = dirichlet_partition(&data, 1, 0.5, 9).unwrap();
        assert_eq!(part.shards.len(), 1);
        assert_eq!(part.shards[0].len(), data.len());
        assert!(part.zero_sample_clients.is_empty());
    }

    #[test]
    fn partition_conserves_and_is_disjoint() {
        let data = generate_synthetic(5, 40, 8, 11).unwrap();
        for &alpha in &[0.1, 0.5, 1000.0] {
            for seed in 0..20 {
                let part = dirichlet_partition(&data, 7, alpha, seed).unwrap();
                let total: usize = part.shards.iter().map(|s| s.len()).sum();
                assert_eq!(total, data.len(), "alpha={alpha} seed={seed}");
                // Disjointness: per-class counts across shards must add up.
                let mut counts = vec![0usize; 5];
                for s in &part.shards {
                    for (c, n) in s.class_counts().iter().enumerate() {
                        counts[c] += n;
                    }
                }
                assert_eq!(counts, data.class_counts());
                for (i, s) in part.shards.iter().enumerate() {
                    assert_eq!(s.is_empty(), part.zero_sample_clients.contains(&i));
                }
            }
        }
    }

    #[test]
    fn large_alpha_is_near_uniform() {
        // 10 clients, 10 classes x 1000 samples: per-client class histograms
        // within +-20% of uniform, averaged over 10 seeds.
        let data = generate_synthetic(10, 1000, 4, 3).unwrap();
        let mut worst: f64 = 0.0;
        for seed in 0..10 {
            let part = dirichlet_partition(&data, 10, 1000.0, seed).unwrap();
            for s in &part.shards {
                let counts = s.class_counts();
                let mean = s.len() as f64 / 10.0;
                for &c in &counts {
                    let dev = (c as f64 - mean).abs() / mean;
                    worst = worst.max(dev);
                }
            }
        }
        assert!(worst <= 0.2, "worst relative deviation {worst}");
    }

    #[test]
    fn low_alpha_is_more_heterogeneous() {
        let data = generate_synthetic(10, 200, 4, 17).unwrap();
        let mean_entropy = |alpha: f64| -> f64 {
            let mut total = 0.0;
            let mut n = 0usize;
            for seed in 0..10 {
                let part = dirichlet_partition(&data, 8, alpha, seed).unwrap();
                for s in part.shards.iter().filter(|s| !s.is_empty()) {
                    total += s.label_entropy();
                    n += 1;
                }
            }
            total / n as f64
        };
        let low = mean_entropy(0.1);
        let high = mean_entropy(1000.0);
        assert!(
            low < high,
            "entropy at alpha=0.1 ({low}) should be below alpha=1000 ({high})"
        );
    }

    fn toy_topology(clients: usize) -> CloudTopology {
        CloudTopology::uniform(1, clients, 0.01, 0.09, None).unwrap()
    }

    #[test]
    fn carve_reference_zero_is_noop() {
        let data = generate_synthetic(4, 25, 3, 2).unwrap();
        let part = dirichlet_partition(&data, 4, 0.5, 2).unwrap();
        let split = carve_reference(&part.shards, &toy_topology(4), 0, 7).unwrap();
        assert!(split.reference_shards[0].is_empty());
        assert_eq!(split.client_shards, part.shards);
    }

    #[test]
    fn carve_reference_sizes_and_stratification() {
        let data = generate_synthetic(10, 100, 3, 21).unwrap();
        let part = dirichlet_partition(&data, 5, 0.5, 3).unwrap();
        let split = carve_reference(&part.shards, &toy_topology(5), 100, 7).unwrap();
        let r = &split.reference_shards[0];
        assert_eq!(r.len(), 100);
        // 10 classes present, so each contributes 10 (+- rounding, exact here).
        for (class, &count) in r.class_counts().iter().enumerate() {
            assert!(
                (count as i64 - 10).abs() <= 1,
                "class {class} contributed {count}"
            );
        }
        // Conservation: reference + remaining clients = original.
        let kept: usize = split.client_shards.iter().map(|s| s.len()).sum();
        assert_eq!(kept + 100, data.len());
    }

    #[test]
    fn carve_reference_insufficient_samples_is_config_error() {
        let data = generate_synthetic(2, 5, 3, 2).unwrap();
        let part = dirichlet_partition(&data, 2, 0.5, 2).unwrap();
        let err = carve_reference(&part.shards, &toy_topology(2), 100, 7).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn dataset_file_round_trip() {
        let data = generate_synthetic(3, 4, 5, 33).unwrap();
        let dir = std::env::temp_dir().join("fedsim_data_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("round_trip.csv");
        write_dataset(&path, &data).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(data, back);
    }

    #[test]
    fn dataset_file_errors_name_the_line() {
        let dir = std::env::temp_dir().join("fedsim_data_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.csv");
        std::fs::write(&path, "2,2\n0.5,0.5,0\n0.1,oops,1\n").unwrap();
        let err = read_dataset(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":3:"), "missing line anchor: {msg}");
    }

    #[test]
    fn relabel_permutes_histogram() {
        let data = generate_synthetic(3, 5, 2, 8).unwrap();
        let out = data.relabel(&[2, 0, 1]).unwrap();
        let orig = data.class_counts();
        let new = out.class_counts();
        assert_eq!(new[2], orig[0]);
        assert_eq!(new[0], orig[1]);
        assert_eq!(new[1], orig[2]);
    }
}
