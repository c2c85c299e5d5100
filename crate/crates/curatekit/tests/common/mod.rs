//! Shared generators for integration tests.
#![allow(dead_code)]

use curatekit::matrix::Matrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub fn standard_normal(rng: &mut ChaCha8Rng) -> f32 {
    let u1: f64 = rng.gen_range(1e-9..1.0);
    let u2: f64 = rng.gen();
    ((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()) as f32
}

pub fn gaussian_rows(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dim).map(|_| standard_normal(&mut rng)).collect()).collect()
}

/// Synthetic OOD benchmark: unit-variance in-distribution clusters placed 20σ
/// from the origin along distinct axes, and outliers shifted 20σ away from
/// every cluster (i.e. near the origin, jittered at 0.1σ). Every outlier is
/// therefore equally implausible under each mixture component, which spreads
/// its responsibility and drives typicality toward 1/K, while inliers sit in
/// exactly one component's basin.
pub struct OodBenchmark {
    pub inliers: Matrix,
    pub outliers: Matrix,
    pub dim: usize,
    pub clusters: usize,
}

pub fn ood_benchmark(seed: u64) -> OodBenchmark {
    let dim = 8;
    let clusters = 5;
    let per_cluster = 200;
    let n_outliers = 200;
    let shift = 20.0f32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut inliers = Matrix::empty(dim);
    for c in 0..clusters {
        for _ in 0..per_cluster {
            let mut row: Vec<f32> = (0..dim).map(|_| standard_normal(&mut rng)).collect();
            row[c] += shift;
            inliers.push_row(&row);
        }
    }
    let mut outliers = Matrix::empty(dim);
    for _ in 0..n_outliers {
        let row: Vec<f32> =
            (0..dim).map(|_| standard_normal(&mut rng) * 0.1).collect();
        outliers.push_row(&row);
    }
    OodBenchmark { inliers, outliers, dim, clusters }
}

/// Writes a deterministic corpus of per-model VOC annotation directories
/// under `root` and returns (name, dir) pairs.
pub fn voc_model_dirs(
    root: &std::path::Path,
    model_names: &[&str],
    images: usize,
    seed: u64,
) -> Vec<(String, std::path::PathBuf)> {
    use curatekit::fusion::{write_voc, BBox, ImageMeta, VocAnnotation, VocObject};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let models: Vec<(String, std::path::PathBuf)> = model_names
        .iter()
        .map(|m| {
            let p = root.join(m);
            std::fs::create_dir_all(&p).unwrap();
            (m.to_string(), p)
        })
        .collect();
    for img in 0..images {
        let image = format!("img{img:03}.xml");
        for (_, dir) in &models {
            let objects: Vec<VocObject> = (0..rng.gen_range(1..5))
                .map(|_| {
                    let xmin = rng.gen_range(0.0..200.0);
                    let ymin = rng.gen_range(0.0..200.0);
                    VocObject {
                        label: ["cat", "dog", "bird"][rng.gen_range(0..3)].into(),
                        score: rng.gen_range(0.1..1.0),
                        bbox: BBox {
                            xmin,
                            ymin,
                            xmax: xmin + rng.gen_range(10.0..60.0),
                            ymax: ymin + rng.gen_range(10.0..60.0),
                        },
                    }
                })
                .collect();
            let ann = VocAnnotation {
                meta: ImageMeta {
                    filename: image.replace(".xml", ".jpg"),
                    width: 300,
                    height: 300,
                    depth: 3,
                },
                objects,
            };
            write_voc(&ann, &dir.join(&image)).unwrap();
        }
    }
    models
}

/// Three well-separated Gaussians with known means, for EM recovery checks.
pub fn three_gaussians(seed: u64, sep: f32, per: usize) -> (Matrix, Vec<Vec<f32>>) {
    let dim = 4;
    let means = vec![
        vec![0.0; dim],
        {
            let mut m = vec![0.0; dim];
            m[0] = sep;
            m
        },
        {
            let mut m = vec![0.0; dim];
            m[1] = sep;
            m
        },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Matrix::empty(dim);
    for mean in &means {
        for _ in 0..per {
            let row: Vec<f32> =
                mean.iter().map(|&m| m + standard_normal(&mut rng)).collect();
            data.push_row(&row);
        }
    }
    (data, means)
}
