//! Lloyd's k-means with k-means++ seeding, used for IVF coarse quantizers,
//! PQ codebooks, GMM initialization, and representative batch selection.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::{l2_sq, Matrix};

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub centroids: Matrix,
    pub assignments: Vec<usize>,
    /// Mean squared distance of points to their assigned centroid.
    pub inertia: f64,
}

/// Index and squared distance of the nearest centroid.
pub fn nearest_centroid(centroids: &Matrix, v: &[f32]) -> (usize, f32) {
    let mut best = (0usize, f32::INFINITY);
    for (i, c) in centroids.iter_rows().enumerate() {
        let d = l2_sq(v, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

pub fn kmeans(data: &Matrix, k: usize, iters: usize, seed: u64) -> Result<KMeansFit> {
    kmeans_weighted(data, None, k, iters, seed)
}

/// Weighted Lloyd's iteration. `weights`, when given, scale each point's pull
/// on its centroid and its k-means++ seeding probability.
pub fn kmeans_weighted(
    data: &Matrix,
    weights: Option<&[f32]>,
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<KMeansFit> {
    let n = data.rows();
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("kmeans k={k} with {n} points")));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::InvalidConfig("weights length mismatch".into()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seed(data, weights, k, &mut rng);
    let dim = data.dim();
    let mut assignments = vec![0usize; n];

    for _ in 0..iters {
        let mut changed = false;
        for (i, v) in data.iter_rows().enumerate() {
            let (c, _) = nearest_centroid(&centroids, v);
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }

        let mut sums = vec![0.0f64; k * dim];
        let mut mass = vec![0.0f64; k];
        for (i, v) in data.iter_rows().enumerate() {
            let w = weights.map_or(1.0, |w| w[i] as f64);
            let c = assignments[i];
            mass[c] += w;
            for (j, &x) in v.iter().enumerate() {
                sums[c * dim + j] += w * x as f64;
            }
        }
        let mut next = Vec::with_capacity(k * dim);
        for c in 0..k {
            if mass[c] > 0.0 {
                for j in 0..dim {
                    next.push((sums[c * dim + j] / mass[c]) as f32);
                }
            } else {
                // Re-seed an empty cluster from the point farthest from its centroid.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = l2_sq(data.row(a), centroids.row(assignments[a]));
                        let db = l2_sq(data.row(b), centroids.row(assignments[b]));
                        da.total_cmp(&db)
                    })
                    .unwrap();
                next.extend_from_slice(data.row(far));
            }
        }
        centroids = Matrix::new(dim, next)?;
        if !changed {
            break;
        }
    }

    // Final assignment against the last centroid update.
    let mut total = 0.0f64;
    for (i, v) in data.iter_rows().enumerate() {
        let (c, d) = nearest_centroid(&centroids, v);
        assignments[i] = c;
        total += d as f64;
    }
    let inertia = total / n as f64;

    Ok(KMeansFit { centroids, assignments, inertia })
}

fn plus_plus_seed(data: &Matrix, weights: Option<&[f32]>, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = data.rows();
    let dim = data.dim();
    let w_of = |i: usize| weights.map_or(1.0f64, |w| (w[i] as f64).max(0.0));

    let mut centroids = Matrix::empty(dim);
    let first = sample_weighted(&(0..n).map(w_of).collect::<Vec<_>>(), rng).unwrap_or(0);
    centroids.push_row(data.row(first));

    let mut min_d: Vec<f64> = data.iter_rows().map(|v| l2_sq(v, data.row(first)) as f64).collect();
    for _ in 1..k {
        let probs: Vec<f64> = (0..n).map(|i| min_d[i] * w_of(i)).collect();
        let next = sample_weighted(&probs, rng).unwrap_or_else(|| rng.gen_range(0..n));
        centroids.push_row(data.row(next));
        for (i, v) in data.iter_rows().enumerate() {
            let d = l2_sq(v, data.row(next)) as f64;
            if d < min_d[i] {
                min_d[i] = d;
            }
        }
    }
    centroids
}

fn sample_weighted(weights: &[f64], rng: &mut ChaCha8Rng) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let mut target = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        target -= w;
        if target <= 0.0 {
            return Some(i);
        }
    }
    Some(weights.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_blobs() -> Matrix {
        let mut rows = Vec::new();
        for i in 0..20 {
            let j = i as f32 * 0.01;
            rows.push(vec![j, j]);
            rows.push(vec![10.0 + j, 10.0 + j]);
        }
        Matrix::from_rows(2, rows).unwrap()
    }

    #[test]
    fn separated_blobs_recovered() {
        let data = two_blobs();
        let fit = kmeans(&data, 2, 25, 1).unwrap();
        let mut centers: Vec<f32> = fit.centroids.iter_rows().map(|r| r[0]).collect();
        centers.sort_by(f32::total_cmp);
        assert!((centers[0] - 0.095).abs() < 0.5, "{centers:?}");
        assert!((centers[1] - 10.095).abs() < 0.5, "{centers:?}");
    }

    #[test]
    fn deterministic_given_seed() {
        let data = two_blobs();
        let a = kmeans(&data, 2, 25, 42).unwrap();
        let b = kmeans(&data, 2, 25, 42).unwrap();
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.assignments, b.assignments);
    }

    #[test]
    fn k_larger_than_n_rejected() {
        let data = Matrix::new(2, vec![0.0, 0.0]).unwrap();
        assert!(kmeans(&data, 2, 10, 0).is_err());
    }
}
