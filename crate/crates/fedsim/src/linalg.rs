//! Flat parameter/gradient vectors with layer views.
//!
//! Model weights and updates are flat `f64` vectors tagged with a layer map
//! so aggregation rules can slice out the last fully-connected layer. All
//! reductions run in fixed left-to-right order for bitwise determinism.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Norms below this are treated as zero: a zero gradient carries no
/// direction, so cosines against it are defined as 0.
pub const EPS_NORM: f64 = 1e-12;

/// One contiguous segment of a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSegment {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

/// Ordered layer segments covering `[0, len)` exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerMap {
    segments: Vec<LayerSegment>,
}

impl LayerMap {
    pub fn new(segments: Vec<(impl Into<String>, usize)>) -> Self {
        let mut out = Vec::with_capacity(segments.len());
        let mut start = 0;
        for (name, len) in segments {
            out.push(LayerSegment {
                name: name.into(),
                start,
                len,
            });
            start += len;
        }
        LayerMap { segments: out }
    }

    pub fn single(name: impl Into<String>, len: usize) -> Self {
        LayerMap::new(vec![(name.into(), len)])
    }

    pub fn segments(&self) -> &[LayerSegment] {
        &self.segments
    }

    pub fn total_len(&self) -> usize {
        self.segments.iter().map(|s| s.len).sum()
    }

    pub fn last(&self) -> Option<&LayerSegment> {
        self.segments.last()
    }
}

/// Flat vector of model parameters or gradient entries plus its layer map.
///
/// Immutable after construction; entries are validated finite so NaN/Inf
/// never propagates silently through an aggregation pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
    layer_map: Arc<LayerMap>,
}

impl ParameterVector {
    pub fn new(values: Vec<f64>, layer_map: Arc<LayerMap>) -> Result<Self> {
        if layer_map.segments.is_empty() {
            return Err(Error::contract("layer map must have at least one segment"));
        }
        if layer_map.total_len() != values.len() {
            return Err(Error::contract(format!(
                "layer map covers {} entries but vector has {}",
                layer_map.total_len(),
                values.len()
            )));
        }
        let v = ParameterVector { values, layer_map };
        v.check_finite()?;
        Ok(v)
    }

    /// Single-segment vector, mainly for tests and small oracles.
    pub fn single_layer(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let map = Arc::new(LayerMap::single(name, values.len()));
        ParameterVector::new(values, map)
    }

    pub fn zeros(layer_map: Arc<LayerMap>) -> Self {
        let len = layer_map.total_len();
        ParameterVector {
            values: vec![0.0; len],
            layer_map,
        }
    }

    pub fn zeros_like(&self) -> Self {
        ParameterVector::zeros(self.layer_map.clone())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layer_map(&self) -> &Arc<LayerMap> {
        &self.layer_map
    }

    pub fn same_layout(&self, other: &ParameterVector) -> bool {
        Arc::ptr_eq(&self.layer_map, &other.layer_map) || self.layer_map == other.layer_map
    }

    /// Slice for the final layer map segment (the last fully-connected
    /// layer in the models used here). No copy is made.
    pub fn last_layer(&self) -> &[f64] {
        let seg = self
            .layer_map
            .last()
            .expect("layer map is non-empty by construction");
        &self.values[seg.start..seg.start + seg.len]
    }

    /// Slice for a named segment, if present.
    pub fn layer(&self, name: &str) -> Option<&[f64]> {
        self.layer_map
            .segments
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.values[s.start..s.start + s.len])
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    /// Entrywise scaling. Errors if the result is non-finite.
    pub fn scale(&self, factor: f64) -> Result<Self> {
        let values = self.values.iter().map(|v| v * factor).collect();
        ParameterVector::new(values, self.layer_map.clone())
    }

    fn check_finite(&self) -> Result<()> {
        if let Some(idx) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invariant(format!(
                "non-finite entry {} at index {idx}",
                self.values[idx]
            )));
        }
        Ok(())
    }
}

/// Euclidean norm of a slice.
pub fn l2_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity of two equal-length slices, clamped to [-1, 1].
///
/// If either norm is below [`EPS_NORM`] the result is 0: a (near-)zero
/// vector has no direction.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::contract(format!(
            "cosine_similarity length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na <= EPS_NORM || nb <= EPS_NORM {
        return Ok(0.0);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// `sum_i weights[i] * vectors[i]`, accumulated left-to-right.
///
/// All vectors must share one layer map, which the result inherits.
pub fn weighted_sum(vectors: &[ParameterVector], weights: &[f64]) -> Result<ParameterVector> {
    if vectors.is_empty() {
        return Err(Error::contract("weighted_sum over an empty vector list"));
    }
    if vectors.len() != weights.len() {
        return Err(Error::contract(format!(
            "weighted_sum got {} vectors but {} weights",
            vectors.len(),
            weights.len()
        )));
    }
    let first = &vectors[0];
    for v in &vectors[1..] {
        if !first.same_layout(v) {
            return Err(Error::contract("weighted_sum layer maps differ"));
        }
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
        return Err(Error::contract(format!("non-finite weight {w}")));
    }
    let mut acc = vec![0.0; first.len()];
    for (v, &w) in vectors.iter().zip(weights) {
        for (a, x) in acc.iter_mut().zip(v.values()) {
            *a += w * x;
        }
    }
    ParameterVector::new(acc, first.layer_map.clone())
}
