//! Linear multinomial probe classifier trained by full-batch gradient descent.
//!
//! Deliberately lightweight: the probe only has to turn a labeled pool into
//! per-sample uncertainty scores, and a deterministic linear model does that
//! reproducibly at any scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::pool::LabeledPool;

pub const PROBE_MAX_EPOCHS: usize = 500;
pub const PROBE_GRAD_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeModel {
    /// Class labels in ascending order; row `c` of `weights` scores class `classes[c]`.
    classes: Vec<u32>,
    dim: usize,
    /// `n_classes x dim` weight matrix, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ProbeModel {
    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Softmax class probabilities for one vector.
    pub fn predict_proba(&self, v: &[f32]) -> Result<Vec<f64>> {
        if v.len() != self.dim {
            return Err(Error::DimMismatch { expected: self.dim, got: v.len() });
        }
        let k = self.classes.len();
        let mut logits = vec![0.0f64; k];
        for (c, logit) in logits.iter_mut().enumerate() {
            let row = &self.weights[c * self.dim..(c + 1) * self.dim];
            *logit = self.bias[c] + row.iter().zip(v).map(|(&w, &x)| w * x as f64).sum::<f64>();
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= total;
        }
        Ok(probs)
    }

    pub fn predict(&self, v: &[f32]) -> Result<u32> {
        let probs = self.predict_proba(v)?;
        let best = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap();
        Ok(self.classes[best])
    }

    pub fn accuracy(&self, vectors: &Matrix, labels: &[u32]) -> Result<f64> {
        let mut correct = 0usize;
        for (v, &y) in vectors.iter_rows().zip(labels) {
            if self.predict(v)? == y {
                correct += 1;
            }
        }
        Ok(correct as f64 / labels.len().max(1) as f64)
    }
}

/// Trains the probe on `(vectors[i], labeled.labels()[i])` pairs.
///
/// Runs full-batch gradient descent on the softmax cross-entropy until the
/// gradient norm drops below `PROBE_GRAD_TOL` or `PROBE_MAX_EPOCHS` epochs.
/// Zero initialization makes training deterministic.
pub fn train_probe(labeled: &LabeledPool, vectors: &Matrix) -> Result<ProbeModel> {
    let n = vectors.rows();
    if n != labeled.len() {
        return Err(Error::LabeledPool(format!(
            "{} labels but {} vectors",
            labeled.len(),
            n
        )));
    }
    if n < 2 {
        return Err(Error::LabeledPool("need at least 2 samples to train a probe".into()));
    }
    let mut classes: Vec<u32> = labeled.labels().to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::LabeledPool("probe training requires at least 2 distinct labels".into()));
    }

    let dim = vectors.dim();
    let k = classes.len();
    let targets: Vec<usize> = labeled
        .labels()
        .iter()
        .map(|y| classes.binary_search(y).expect("label present by construction"))
        .collect();

    // Step size scaled by feature magnitude keeps full-batch GD stable
    // without tuning per dataset.
    let mean_sq_norm: f64 = vectors
        .iter_rows()
        .map(|r| r.iter().map(|&x| (x as f64).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n as f64;
    let lr = 2.0 / (1.0 + mean_sq_norm);

    let mut model = ProbeModel {
        classes,
        dim,
        weights: vec![0.0; k * dim],
        bias: vec![0.0; k],
    };

    for _ in 0..PROBE_MAX_EPOCHS {
        let mut grad_w = vec![0.0f64; k * dim];
        let mut grad_b = vec![0.0f64; k];
        for (i, v) in vectors.iter_rows().enumerate() {
            let probs = model.predict_proba(v)?;
            for c in 0..k {
                let err = probs[c] - if targets[i] == c { 1.0 } else { 0.0 };
                grad_b[c] += err;
                let row = &mut grad_w[c * dim..(c + 1) * dim];
                for (g, &x) in row.iter_mut().zip(v) {
                    *g += err * x as f64;
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        let mut grad_norm_sq = 0.0;
        for g in grad_w.iter_mut().chain(grad_b.iter_mut()) {
            *g *= inv_n;
            grad_norm_sq += *g * *g;
        }
        for (w, g) in model.weights.iter_mut().zip(&grad_w) {
            *w -= lr * g;
        }
        for (b, g) in model.bias.iter_mut().zip(&grad_b) {
            *b -= lr * g;
        }
        if grad_norm_sq.sqrt() < PROBE_GRAD_TOL {
            break;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(n_per: usize, sep: f32) -> (LabeledPool, Matrix) {
        let mut rows = Vec::new();
        let mut ids = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n_per {
            let jitter = (i as f32 % 7.0) * 0.05;
            rows.push(vec![jitter, jitter]);
            ids.push(2 * i as u64);
            labels.push(0);
            rows.push(vec![sep + jitter, sep + jitter]);
            ids.push(2 * i as u64 + 1);
            labels.push(1);
        }
        (LabeledPool::new(ids, labels).unwrap(), Matrix::from_rows(2, rows).unwrap())
    }

    #[test]
    fn separable_blobs_reach_perfect_training_accuracy() {
        let (labeled, vectors) = blobs(50, 8.0);
        let model = train_probe(&labeled, &vectors).unwrap();
        assert_eq!(model.accuracy(&vectors, labeled.labels()).unwrap(), 1.0);
    }

    #[test]
    fn single_class_pool_is_rejected() {
        let labeled = LabeledPool::new(vec![0, 1], vec![3, 3]).unwrap();
        let vectors = Matrix::new(2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert!(train_probe(&labeled, &vectors).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let (labeled, vectors) = blobs(20, 4.0);
        let a = train_probe(&labeled, &vectors).unwrap();
        let b = train_probe(&labeled, &vectors).unwrap();
        assert_eq!(a.weights(), b.weights());
    }

    #[test]
    fn probabilities_sum_to_one() {
        let (labeled, vectors) = blobs(20, 4.0);
        let model = train_probe(&labeled, &vectors).unwrap();
        for v in vectors.iter_rows() {
            let p: f64 = model.predict_proba(v).unwrap().iter().sum();
            assert!((p - 1.0).abs() < 1e-6);
        }
    }
}
