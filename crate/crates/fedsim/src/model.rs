//! Small differentiable classifiers with hand-written gradients.
//!
//! Two variants behind one parameter layout: plain softmax regression
//! (`hidden_dim = 0`) and a one-hidden-layer tanh MLP. The last layer map
//! segment is always the output layer, which is what the reputation and
//! trust rules slice out.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{LayerMap, ParameterVector};
use crate::seed;

/// Classifier shape. `hidden_dim = 0` selects softmax regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
}

/// Local SGD knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            local_epochs: 5,
            batch_size: 32,
            learning_rate: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_epochs == 0 {
            return Err(Error::config("local_epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config(format!(
                "learning_rate {} must be > 0",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.num_classes == 0 {
            return Err(Error::config("feature_dim and num_classes must be positive"));
        }
        Ok(())
    }

    /// Total parameter count `d`.
    pub fn param_count(&self) -> usize {
        if self.hidden_dim == 0 {
            self.num_classes * (self.feature_dim + 1)
        } else {
            self.hidden_dim * (self.feature_dim + 1) + self.num_classes * (self.hidden_dim + 1)
        }
    }

    /// Layer map for this shape: `hidden` then `output`, or `output` alone.
    pub fn layer_map(&self) -> LayerMap {
        if self.hidden_dim == 0 {
            LayerMap::single("output", self.num_classes * (self.feature_dim + 1))
        } else {
            LayerMap::new(vec![
                ("hidden".to_string(), self.hidden_dim * (self.feature_dim + 1)),
                ("output".to_string(), self.num_classes * (self.hidden_dim + 1)),
            ])
        }
    }

    /// Seeded Gaussian init scaled by 1/sqrt(fan_in); biases zero.
    pub fn init_params(&self, seed_value: u64) -> Result<ParameterVector> {
        let map = Arc::new(self.layer_map());
        let mut rng = seed::rng(seed_value, &[seed::stream::MODEL_INIT]);
        let mut values = vec![0.0; self.param_count()];
        if self.hidden_dim == 0 {
            let scale = 1.0 / (self.feature_dim as f64).sqrt();
            let normal = Normal::new(0.0, scale).expect("finite std");
            for v in values.iter_mut().take(self.num_classes * self.feature_dim) {
                *v = normal.sample(&mut rng);
            }
        } else {
            let s1 = 1.0 / (self.feature_dim as f64).sqrt();
            let s2 = 1.0 / (self.hidden_dim as f64).sqrt();
            let n1 = Normal::new(0.0, s1).expect("finite std");
            let n2 = Normal::new(0.0, s2).expect("finite std");
            let w1_len = self.hidden_dim * self.feature_dim;
            let hidden_len = self.hidden_dim * (self.feature_dim + 1);
            let w2_len = self.num_classes * self.hidden_dim;
            for v in values.iter_mut().take(w1_len) {
                *v = n1.sample(&mut rng);
            }
            for v in values[hidden_len..hidden_len + w2_len].iter_mut() {
                *v = n2.sample(&mut rng);
            }
        }
        ParameterVector::new(values, map)
    }

    fn check_params(&self, w: &ParameterVector) -> Result<()> {
        if w.len() != self.param_count() {
            return Err(Error::contract(format!(
                "parameter vector of length {} for a model with {} parameters",
                w.len(),
                self.param_count()
            )));
        }
        Ok(())
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.feature_dim() != self.feature_dim {
            return Err(Error::contract(format!(
                "dataset feature_dim {} != model feature_dim {}",
                data.feature_dim(),
                self.feature_dim
            )));
        }
        if data.num_classes() != self.num_classes {
            return Err(Error::contract(format!(
                "dataset num_classes {} != model num_classes {}",
                data.num_classes(),
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Mean cross-entropy loss and top-1 accuracy over `batch`.
    pub fn forward_loss(&self, w: &ParameterVector, batch: &Dataset) -> Result<(f64, f64)> {
        if batch.is_empty() {
            return Err(Error::contract("forward_loss over an empty batch"));
        }
        self.check_params(w)?;
        self.check_data(batch)?;
        let indices: Vec<usize> = (0..batch.len()).collect();
        let (loss_sum, correct) = self.eval_indices(w.values(), batch, &indices, None);
        let n = batch.len() as f64;
        Ok((loss_sum / n, correct as f64 / n))
    }

    /// Exact gradient of the mean cross-entropy at `w`; layer map matches `w`.
    pub fn gradient(&self, w: &ParameterVector, batch: &Dataset) -> Result<ParameterVector> {
        if batch.is_empty() {
            return Err(Error::contract("gradient over an empty batch"));
        }
        self.check_params(w)?;
        self.check_data(batch)?;
        let indices: Vec<usize> = (0..batch.len()).collect();
        self.gradient_at(w, batch, &indices)
    }

    fn gradient_at(&self, w: &ParameterVector, data: &Dataset, indices: &[usize]) -> Result<ParameterVector> {
        let mut grad = vec![0.0; self.param_count()];
        self.eval_indices(w.values(), data, indices, Some(&mut grad));
        let inv = 1.0 / indices.len() as f64;
        for g in &mut grad {
            *g *= inv;
        }
        ParameterVector::new(grad, w.layer_map().clone())
    }

    /// Forward (and optionally backward) pass over the given rows.
    /// Returns (sum of losses, correct count); the gradient buffer, when
    /// present, accumulates un-normalized per-sample gradients.
    fn eval_indices(
        &self,
        w: &[f64],
        data: &Dataset,
        indices: &[usize],
        mut grad: Option<&mut [f64]>,
    ) -> (f64, usize) {
        let f = self.feature_dim;
        let h = self.hidden_dim;
        let c = self.num_classes;
        let mut loss_sum = 0.0;
        let mut correct = 0usize;

        let mut hidden = vec![0.0; h];
        let mut logits = vec![0.0; c];
        let mut probs = vec![0.0; c];

        // Parameter offsets within the flat vector.
        let (w1, b1, w2, b2) = if h == 0 {
            (0, 0, 0, c * f)
        } else {
            let hidden_len = h * (f + 1);
            (0, h * f, hidden_len, hidden_len + c * h)
        };

        for &row in indices {
            let x = data.row(row);
            let y = data.label(row);

            if h == 0 {
                for cls in 0..c {
                    let base = w1 + cls * f;
                    let mut z = w[b2 + cls];
                    for k in 0..f {
                        z += w[base + k] * x[k];
                    }
                    logits[cls] = z;
                }
            } else {
                for j in 0..h {
                    let base = w1 + j * f;
                    let mut z = w[b1 + j];
                    for k in 0..f {
                        z += w[base + k] * x[k];
                    }
                    hidden[j] = z.tanh();
                }
                for cls in 0..c {
                    let base = w2 + cls * h;
                    let mut z = w[b2 + cls];
                    for j in 0..h {
                        z += w[base + j] * hidden[j];
                    }
                    logits[cls] = z;
                }
            }

            // Stable softmax cross-entropy; argmax ties go to the lowest class.
            let mut best = 0usize;
            let mut max_logit = logits[0];
            for (cls, &l) in logits.iter().enumerate().skip(1) {
                if l > max_logit {
                    max_logit = l;
                    best = cls;
                }
            }
            let mut denom = 0.0;
            for cls in 0..c {
                probs[cls] = (logits[cls] - max_logit).exp();
                denom += probs[cls];
            }
            let lse = max_logit + denom.ln();
            loss_sum += lse - logits[y];
            if best == y {
                correct += 1;
            }
            for p in &mut probs {
                *p /= denom;
            }

            if let Some(g) = grad.as_deref_mut() {
                if h == 0 {
                    for cls in 0..c {
                        let d = probs[cls] - if cls == y { 1.0 } else { 0.0 };
                        let base = w1 + cls * f;
                        for k in 0..f {
                            g[base + k] += d * x[k];
                        }
                        g[b2 + cls] += d;
                    }
                } else {
                    let mut d_hidden = vec![0.0; h];
                    for cls in 0..c {
                        let d = probs[cls] - if cls == y { 1.0 } else { 0.0 };
                        let base = w2 + cls * h;
                        for j in 0..h {
                            g[base + j] += d * hidden[j];
                            d_hidden[j] += d * w[base + j];
                        }
                        g[b2 + cls] += d;
                    }
                    for j in 0..h {
                        let dz = d_hidden[j] * (1.0 - hidden[j] * hidden[j]);
                        let base = w1 + j * f;
                        for k in 0..f {
                            g[base + k] += dz * x[k];
                        }
                        g[b1 + j] += dz;
                    }
                }
            }
        }
        (loss_sum, correct)
    }

    /// `local_epochs` of mini-batch SGD from `w_global`. Returns the model
    /// update `w_global - w_local` (the pseudo-gradient the aggregators
    /// consume); an empty shard yields the zero vector.
    pub fn local_train(
        &self,
        w_global: &ParameterVector,
        shard: &Dataset,
        cfg: &TrainConfig,
        seed_value: u64,
    ) -> Result<ParameterVector> {
        cfg.validate()?;
        self.check_params(w_global)?;
        if shard.is_empty() {
            return Ok(w_global.zeros_like());
        }
        self.check_data(shard)?;

        let mut rng = seed::rng(seed_value, &[seed::stream::TRAIN]);
        let mut w = w_global.values().to_vec();
        let mut order: Vec<usize> = (0..shard.len()).collect();
        let mut grad = vec![0.0; self.param_count()];

        for _ in 0..cfg.local_epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                self.eval_indices(&w, shard, chunk, Some(&mut grad));
                let step = cfg.learning_rate / chunk.len() as f64;
                for (wi, gi) in w.iter_mut().zip(&grad) {
                    *wi -= step * gi;
                }
            }
        }

        let delta: Vec<f64> = w_global.values().iter().zip(&w).map(|(g, l)| g - l).collect();
        ParameterVector::new(delta, w_global.layer_map().clone())
    }

    /// The trust anchor: the same local training procedure run on the
    /// cloud's clean reference shard.
    pub fn reference_gradient(
        &self,
        w_global: &ParameterVector,
        ref_shard: &Dataset,
        cfg: &TrainConfig,
        seed_value: u64,
    ) -> Result<ParameterVector> {
        if ref_shard.is_empty() {
            return Err(Error::config("reference shard is empty"));
        }
        self.local_train(w_global, ref_shard, cfg, seed_value)
    }
}
