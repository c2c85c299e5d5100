//! Typicality-based out-of-distribution filtering.
//!
//! A Gaussian mixture is fitted to the labeled pool by EM; a candidate's
//! typicality is its maximum component responsibility, and candidates under a
//! threshold τ are rejected. Note that max-responsibility measures alignment
//! with one component, not density: a point can sit far from every component
//! yet score high when a single component dominates the posterior. The
//! threshold therefore targets the ambiguity structure of the fitted mixture,
//! not raw likelihood.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::kmeans;
use crate::matrix::Matrix;

pub const GMM_MAX_ITERS: usize = 200;
pub const GMM_REL_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    Diagonal,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    /// Component count K.
    pub k: usize,
    /// `None` resolves to full covariance below 64 dimensions, diagonal at or
    /// above it.
    pub covariance: Option<CovarianceKind>,
    /// Added to every covariance diagonal for positive definiteness.
    pub reg_eps: f64,
    pub max_iters: usize,
    /// Relative log-likelihood change that stops EM.
    pub tol: f64,
    pub seed: u64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            k: 5,
            covariance: None,
            reg_eps: 1e-6,
            max_iters: GMM_MAX_ITERS,
            tol: GMM_REL_TOL,
            seed: 0,
        }
    }
}

impl GmmConfig {
    pub fn resolved_covariance(&self, dim: usize) -> CovarianceKind {
        self.covariance.unwrap_or(if dim >= 64 {
            CovarianceKind::Diagonal
        } else {
            CovarianceKind::Full
        })
    }
}

/// Per-component covariance. Full covariance carries its Cholesky factor so
/// scoring never refactorizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Cov {
    /// Per-dimension variances.
    Diagonal(Vec<f64>),
    /// Row-major `dim x dim` covariance plus its lower Cholesky factor.
    Full { matrix: Vec<f64>, chol: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Component {
    weight: f64,
    mean: Vec<f64>,
    cov: Cov,
}

/// A fitted Gaussian mixture Θ = {π_k, μ_k, Σ_k}. Immutable once fitted;
/// scoring is read-only and safe to share across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    dim: usize,
    components: Vec<Component>,
    /// Mean log-likelihood per EM iteration, nondecreasing.
    log_likelihood_trace: Vec<f64>,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.components[k].mean
    }

    /// Diagonal of component `k`'s covariance.
    pub fn variance_diagonal(&self, k: usize) -> Vec<f64> {
        match &self.components[k].cov {
            Cov::Diagonal(v) => v.clone(),
            Cov::Full { matrix, .. } => {
                (0..self.dim).map(|i| matrix[i * self.dim + i]).collect()
            }
        }
    }

    pub fn log_likelihood_trace(&self) -> &[f64] {
        &self.log_likelihood_trace
    }

    /// ln(π_k · N(x | μ_k, Σ_k)) for every component.
    fn weighted_log_densities(&self, x: &[f32]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimMismatch { expected: self.dim, got: x.len() });
        }
        Ok(self
            .components
            .iter()
            .map(|c| c.weight.max(f64::MIN_POSITIVE).ln() + log_density(c, x))
            .collect())
    }

    /// Posterior responsibilities γ, length K, summing to 1. Computed in
    /// log-space so distant points never underflow to 0/0.
    pub fn responsibilities(&self, x: &[f32]) -> Result<Vec<f64>> {
        let logs = self.weighted_log_densities(x)?;
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut gamma: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = gamma.iter().sum();
        for g in &mut gamma {
            *g /= total;
        }
        Ok(gamma)
    }

    /// Typicality S(x) = max_k γ_k(x), in [1/K, 1].
    pub fn typicality(&self, x: &[f32]) -> Result<f64> {
        Ok(self
            .responsibilities(x)?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max))
    }

    pub fn typicality_batch(&self, vectors: &Matrix) -> Result<Vec<f64>> {
        vectors.iter_rows().map(|v| self.typicality(v)).collect()
    }

    /// Mean log-likelihood of `vectors` under the mixture.
    pub fn mean_log_likelihood(&self, vectors: &Matrix) -> Result<f64> {
        let mut total = 0.0;
        for v in vectors.iter_rows() {
            let logs = self.weighted_log_densities(v)?;
            total += log_sum_exp(&logs);
        }
        Ok(total / vectors.rows().max(1) as f64)
    }
}

fn log_sum_exp(logs: &[f64]) -> f64 {
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + logs.iter().map(|&l| (l - max).exp()).sum::<f64>().ln()
}

const LN_2PI: f64 = 1.8378770664093453;

fn log_density(c: &Component, x: &[f32]) -> f64 {
    let d = c.mean.len();
    match &c.cov {
        Cov::Diagonal(vars) => {
            let mut log_det = 0.0;
            let mut maha = 0.0;
            for i in 0..d {
                let diff = x[i] as f64 - c.mean[i];
                log_det += vars[i].ln();
                maha += diff * diff / vars[i];
            }
            -0.5 * (d as f64 * LN_2PI + log_det + maha)
        }
        Cov::Full { chol, .. } => {
            // Solve L y = (x - μ); then maha = |y|^2 and ln|Σ| = 2 Σ ln L_ii.
            let mut y = vec![0.0f64; d];
            let mut log_det = 0.0;
            for i in 0..d {
                let mut s = x[i] as f64 - c.mean[i];
                for j in 0..i {
                    s -= chol[i * d + j] * y[j];
                }
                let lii = chol[i * d + i];
                y[i] = s / lii;
                log_det += 2.0 * lii.ln();
            }
            let maha: f64 = y.iter().map(|v| v * v).sum();
            -0.5 * (d as f64 * LN_2PI + log_det + maha)
        }
    }
}

/// Lower Cholesky factor of a row-major symmetric positive-definite matrix.
fn cholesky(matrix: &[f64], d: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0f64; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = matrix[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::InvalidConfig(
                        "covariance not positive definite after regularization".into(),
                    ));
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Ok(l)
}

/// Fits a K-component mixture by EM.
///
/// Initialization is k-means++ hard assignments under `config.seed`, so the
/// fit is deterministic. Iterates until the relative change in mean
/// log-likelihood drops below `config.tol` or `config.max_iters` passes; the
/// recorded trace is nondecreasing.
pub fn fit_gmm(vectors: &Matrix, config: &GmmConfig) -> Result<GmmModel> {
    let n = vectors.rows();
    let d = vectors.dim();
    if config.k == 0 {
        return Err(Error::InvalidConfig("gmm needs k >= 1".into()));
    }
    if n < config.k {
        return Err(Error::InvalidConfig(format!(
            "gmm k={} exceeds sample count {n}",
            config.k
        )));
    }
    if vectors.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("gmm input contains non-finite values".into()));
    }
    let cov_kind = config.resolved_covariance(d);
    let k = config.k;

    // Hard k-means assignments become one-hot responsibilities.
    let seed_fit = kmeans(vectors, k, 25, config.seed)?;
    let mut resp = vec![0.0f64; n * k];
    for (i, &c) in seed_fit.assignments.iter().enumerate() {
        resp[i * k + c] = 1.0;
    }

    let mut model = GmmModel {
        dim: d,
        components: Vec::new(),
        log_likelihood_trace: Vec::new(),
    };
    let mut prev_ll = f64::NEG_INFINITY;
    for _ in 0..config.max_iters.max(1) {
        model.components = m_step(vectors, &resp, k, cov_kind, config.reg_eps)?;

        // E-step: refresh responsibilities and score the data.
        let mut ll = 0.0;
        for (i, v) in vectors.iter_rows().enumerate() {
            let logs = model.weighted_log_densities(v)?;
            let norm = log_sum_exp(&logs);
            ll += norm;
            for (c, &l) in logs.iter().enumerate() {
                resp[i * k + c] = (l - norm).exp();
            }
        }
        ll /= n as f64;
        if !ll.is_finite() {
            return Err(Error::InvalidConfig("gmm log-likelihood diverged".into()));
        }
        model.log_likelihood_trace.push(ll);
        if prev_ll.is_finite() && (ll - prev_ll).abs() / prev_ll.abs().max(1.0) < config.tol {
            break;
        }
        prev_ll = ll;
    }
    Ok(model)
}

fn m_step(
    vectors: &Matrix,
    resp: &[f64],
    k: usize,
    cov_kind: CovarianceKind,
    reg_eps: f64,
) -> Result<Vec<Component>> {
    let n = vectors.rows();
    let d = vectors.dim();
    let mut components = Vec::with_capacity(k);
    for c in 0..k {
        // Weight floor keeps an emptied component alive and the math finite.
        let nk: f64 = (0..n).map(|i| resp[i * k + c]).sum::<f64>().max(1e-10);
        let mut mean = vec![0.0f64; d];
        for (i, v) in vectors.iter_rows().enumerate() {
            let r = resp[i * k + c];
            if r > 0.0 {
                for (m, &x) in mean.iter_mut().zip(v) {
                    *m += r * x as f64;
                }
            }
        }
        for m in &mut mean {
            *m /= nk;
        }
        let cov = match cov_kind {
            CovarianceKind::Diagonal => {
                let mut vars = vec![0.0f64; d];
                for (i, v) in vectors.iter_rows().enumerate() {
                    let r = resp[i * k + c];
                    if r > 0.0 {
                        for (s, (&x, m)) in vars.iter_mut().zip(v.iter().zip(&mean)) {
                            let diff = x as f64 - m;
                            *s += r * diff * diff;
                        }
                    }
                }
                for s in &mut vars {
                    *s = *s / nk + reg_eps;
                }
                Cov::Diagonal(vars)
            }
            CovarianceKind::Full => {
                let mut matrix = vec![0.0f64; d * d];
                let mut diff = vec![0.0f64; d];
                for (i, v) in vectors.iter_rows().enumerate() {
                    let r = resp[i * k + c];
                    if r > 0.0 {
                        for (dst, (&x, m)) in diff.iter_mut().zip(v.iter().zip(&mean)) {
                            *dst = x as f64 - m;
                        }
                        for a in 0..d {
                            let ra = r * diff[a];
                            for b in 0..=a {
                                matrix[a * d + b] += ra * diff[b];
                            }
                        }
                    }
                }
                for a in 0..d {
                    for b in 0..=a {
                        let v = matrix[a * d + b] / nk;
                        matrix[a * d + b] = v;
                        matrix[b * d + a] = v;
                    }
                    matrix[a * d + a] += reg_eps;
                }
                let chol = cholesky(&matrix, d)?;
                Cov::Full { matrix, chol }
            }
        };
        components.push(Component { weight: nk / n as f64, mean, cov });
    }
    // Renormalize in case weight floors perturbed the sum.
    let total: f64 = components.iter().map(|c| c.weight).sum();
    for c in &mut components {
        c.weight /= total;
    }
    Ok(components)
}

/// τ chosen as the 5th percentile (nearest-rank) of the labeled pool's own
/// typicality scores.
pub fn auto_tau(model: &GmmModel, labeled_vectors: &Matrix) -> Result<f64> {
    let mut scores = model.typicality_batch(labeled_vectors)?;
    if scores.is_empty() {
        return Err(Error::InvalidConfig("auto tau needs a non-empty labeled pool".into()));
    }
    scores.sort_by(f64::total_cmp);
    let rank = ((0.05 * scores.len() as f64).ceil() as usize).max(1) - 1;
    Ok(scores[rank])
}

/// Exact partition of a candidate batch by typicality threshold.
const GMM_MAGIC: &[u8; 8] = b"CKGMM\0\0\0";
const GMM_VERSION: u32 = 1;

/// Writes a fitted model as magic + version + bincode body.
pub fn save_gmm(model: &GmmModel, path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(GMM_MAGIC)?;
    w.write_all(&GMM_VERSION.to_le_bytes())?;
    bincode::serialize_into(&mut w, model)
        .map_err(|e| Error::InvalidConfig(format!("gmm serialization failed: {e}")))?;
    w.flush()?;
    Ok(())
}

pub fn load_gmm(path: &std::path::Path) -> Result<GmmModel> {
    use std::io::Read;
    let corrupt =
        |reason: String| Error::Corrupt { path: path.to_path_buf(), reason };
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut header = [0u8; 12];
    r.read_exact(&mut header).map_err(|_| corrupt("header shorter than 12 bytes".into()))?;
    if &header[0..8] != GMM_MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if version != GMM_VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    bincode::deserialize_from(r).map_err(|e| corrupt(format!("body: {e}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub accepted: Vec<u64>,
    pub rejected: Vec<u64>,
    /// Typicality per candidate, aligned with the input order.
    pub scores: Vec<f64>,
    pub tau: f64,
}

/// Splits candidates into accepted (S(x) ≥ τ) and rejected sets.
pub fn filter_batch(
    model: &GmmModel,
    ids: &[u64],
    vectors: &Matrix,
    tau: f64,
) -> Result<FilterOutcome> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidConfig(format!("tau {tau} outside [0, 1]")));
    }
    if ids.len() != vectors.rows() {
        return Err(Error::InvalidConfig(format!(
            "{} ids but {} vectors",
            ids.len(),
            vectors.rows()
        )));
    }
    let scores = model.typicality_batch(vectors)?;
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for (&id, &s) in ids.iter().zip(&scores) {
        if s >= tau {
            accepted.push(id);
        } else {
            rejected.push(id);
        }
    }
    Ok(FilterOutcome { accepted, rejected, scores, tau })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: Vec<Vec<f32>>) -> Matrix {
        Matrix::from_rows(rows[0].len(), rows).unwrap()
    }

    #[test]
    fn k1_recovers_sample_mean_and_variance() {
        let data = matrix(vec![
            vec![1.0, 10.0],
            vec![3.0, 14.0],
            vec![5.0, 18.0],
        ]);
        let config = GmmConfig { k: 1, covariance: Some(CovarianceKind::Diagonal), ..GmmConfig::default() };
        let model = fit_gmm(&data, &config).unwrap();
        assert!((model.mean(0)[0] - 3.0).abs() < 1e-9);
        assert!((model.mean(0)[1] - 14.0).abs() < 1e-9);
        let vars = model.variance_diagonal(0);
        // Population variance of {1,3,5} is 8/3, plus reg_eps.
        assert!((vars[0] - (8.0 / 3.0 + 1e-6)).abs() < 1e-9);
        assert!((vars[1] - (32.0 / 3.0 + 1e-6)).abs() < 1e-8);
        assert_eq!(model.weights(), vec![1.0]);
    }

    #[test]
    fn k1_typicality_is_always_one() {
        let data = matrix(vec![vec![0.0], vec![1.0], vec![2.0]]);
        let config = GmmConfig { k: 1, ..GmmConfig::default() };
        let model = fit_gmm(&data, &config).unwrap();
        assert_eq!(model.responsibilities(&[100.0]).unwrap(), vec![1.0]);
        assert_eq!(model.typicality(&[-50.0]).unwrap(), 1.0);
    }

    #[test]
    fn equidistant_point_splits_responsibility_evenly() {
        // Two symmetric clusters; x = 0 is equidistant from both means.
        let data = matrix(vec![
            vec![-5.0],
            vec![-5.2],
            vec![-4.8],
            vec![5.0],
            vec![5.2],
            vec![4.8],
        ]);
        let config = GmmConfig { k: 2, ..GmmConfig::default() };
        let model = fit_gmm(&data, &config).unwrap();
        let gamma = model.responsibilities(&[0.0]).unwrap();
        assert!((gamma[0] - 0.5).abs() < 1e-6, "gamma = {gamma:?}");
        assert!((gamma[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn point_at_a_far_mean_gets_near_unit_responsibility() {
        let data = matrix(vec![
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![-0.1, 0.0],
            vec![20.0, 0.0],
            vec![20.1, 0.0],
            vec![19.9, 0.0],
        ]);
        let config = GmmConfig { k: 2, ..GmmConfig::default() };
        let model = fit_gmm(&data, &config).unwrap();
        let s = model.typicality(&[20.0, 0.0]).unwrap();
        assert!(s > 0.999, "typicality {s}");
    }

    #[test]
    fn responsibilities_sum_to_one_even_for_distant_points() {
        let data = matrix(vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 0.0], vec![0.0, 2.0]]);
        let config = GmmConfig { k: 2, ..GmmConfig::default() };
        let model = fit_gmm(&data, &config).unwrap();
        for x in [[0.5f32, 0.5], [1e4, -1e4], [-3e3, 0.0]] {
            let gamma = model.responsibilities(&x).unwrap();
            let total: f64 = gamma.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
            let s = model.typicality(&x).unwrap();
            assert!((1.0 / 2.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn log_likelihood_trace_is_monotone() {
        let data = matrix(
            (0..60)
                .map(|i| vec![(i % 13) as f32 * 0.7, (i % 7) as f32 - 3.0])
                .collect(),
        );
        let config = GmmConfig { k: 3, ..GmmConfig::default() };
        let model = fit_gmm(&data, &config).unwrap();
        let trace = model.log_likelihood_trace();
        assert!(!trace.is_empty());
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "trace decreased: {w:?}");
        }
    }

    #[test]
    fn fit_is_deterministic_under_seed() {
        let data = matrix((0..40).map(|i| vec![(i % 11) as f32, (i % 5) as f32]).collect());
        let config = GmmConfig { k: 3, seed: 9, ..GmmConfig::default() };
        let a = fit_gmm(&data, &config).unwrap();
        let b = fit_gmm(&data, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn k_larger_than_sample_count_is_rejected() {
        let data = matrix(vec![vec![0.0], vec![1.0]]);
        let config = GmmConfig { k: 3, ..GmmConfig::default() };
        assert!(fit_gmm(&data, &config).is_err());
    }

    #[test]
    fn filter_partition_is_exact() {
        let data = matrix(vec![vec![0.0], vec![0.1], vec![-0.1], vec![10.0], vec![10.1], vec![9.9]]);
        let config = GmmConfig { k: 2, ..GmmConfig::default() };
        let model = fit_gmm(&data, &config).unwrap();
        let ids = vec![1, 2, 3, 4];
        let batch = matrix(vec![vec![0.0], vec![5.0], vec![10.0], vec![4.9]]);
        let out = filter_batch(&model, &ids, &batch, 0.9).unwrap();
        assert_eq!(out.accepted.len() + out.rejected.len(), ids.len());
        for id in &ids {
            assert_ne!(out.accepted.contains(id), out.rejected.contains(id));
        }
        // τ = 0 accepts everything.
        let all = filter_batch(&model, &ids, &batch, 0.0).unwrap();
        assert_eq!(all.accepted, ids);
        assert!(all.rejected.is_empty());
    }

    #[test]
    fn full_covariance_captures_correlation() {
        // Strongly correlated 2-d data; a full-covariance single component
        // must assign the on-axis point a much higher density than the
        // off-axis point at the same Euclidean distance.
        let rows: Vec<Vec<f32>> = (0..50)
            .map(|i| {
                let t = (i as f32 - 25.0) * 0.2;
                vec![t, t + (i % 3) as f32 * 0.05]
            })
            .collect();
        let data = matrix(rows);
        let config = GmmConfig { k: 1, covariance: Some(CovarianceKind::Full), ..GmmConfig::default() };
        let model = fit_gmm(&data, &config).unwrap();
        let on_axis = model.mean_log_likelihood(&matrix(vec![vec![2.0, 2.0]])).unwrap();
        let off_axis = model.mean_log_likelihood(&matrix(vec![vec![2.0, -2.0]])).unwrap();
        assert!(on_axis > off_axis + 1.0, "on {on_axis} off {off_axis}");
    }

    #[test]
    fn invalid_tau_is_rejected() {
        let data = matrix(vec![vec![0.0], vec![1.0]]);
        let config = GmmConfig { k: 1, ..GmmConfig::default() };
        let model = fit_gmm(&data, &config).unwrap();
        let batch = matrix(vec![vec![0.0]]);
        assert!(filter_batch(&model, &[0], &batch, 1.5).is_err());
        assert!(filter_batch(&model, &[0], &batch, -0.1).is_err());
    }
}
