//! Fits a GMM typicality model on clustered in-distribution data, derives the
//! auto quantile threshold, and filters a candidate batch containing planted
//! outliers.

use curatekit::matrix::Matrix;
use curatekit::ood::{auto_tau, filter_batch, fit_gmm, GmmConfig};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn normal(rng: &mut ChaCha8Rng) -> f32 {
    let u1: f64 = rng.gen_range(1e-9..1.0);
    let u2: f64 = rng.gen();
    ((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()) as f32
}

fn main() -> curatekit::Result<()> {
    let (dim, clusters) = (8, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    // In-distribution: tight clusters far from the origin along distinct axes.
    let mut train = Matrix::empty(dim);
    for c in 0..clusters {
        for _ in 0..300 {
            let mut row: Vec<f32> = (0..dim).map(|_| normal(&mut rng)).collect();
            row[c] += 20.0;
            train.push_row(&row);
        }
    }
    let model = fit_gmm(&train, &GmmConfig { k: clusters, ..GmmConfig::default() })?;
    let tau = auto_tau(&model, &train)?;
    println!("fitted {}-component GMM, auto tau = {tau:.4}", model.k());

    // Candidates: 80 inliers plus 20 outliers near the origin.
    let mut candidates = Matrix::empty(dim);
    let mut ids = Vec::new();
    for i in 0..100u64 {
        let row: Vec<f32> = if i < 80 {
            let mut r: Vec<f32> = (0..dim).map(|_| normal(&mut rng)).collect();
            r[(i % clusters as u64) as usize] += 20.0;
            r
        } else {
            // Outliers sit near the origin, 20σ from every cluster.
            (0..dim).map(|_| normal(&mut rng) * 0.1).collect()
        };
        candidates.push_row(&row);
        ids.push(i);
    }
    let outcome = filter_batch(&model, &ids, &candidates, tau)?;
    let rejected_outliers = outcome.rejected.iter().filter(|&&id| id >= 80).count();
    println!(
        "accepted {} / 100 candidates; rejected {rejected_outliers} of 20 planted outliers",
        outcome.accepted.len()
    );
    Ok(())
}
