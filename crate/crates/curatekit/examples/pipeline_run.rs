//! Builds fixture files in a temporary directory, assembles a declarative
//! pipeline spec (index → select → ood), runs it twice, and shows that the
//! manifest checksums are identical across reruns.

use curatekit::al::AlConfig;
use curatekit::ood::GmmConfig;
use curatekit::pipeline::{
    run_pipeline, IndexStage, OodStage, PipelineSpec, SelectStage, Stage,
};
use curatekit::pool::{write_labels, write_pool, LabeledPool, VectorPool};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn random_pool(n: usize, dim: usize, seed: u64) -> curatekit::Result<VectorPool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    VectorPool::new(dim, (0..n * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
}

fn main() -> curatekit::Result<()> {
    let dir = tempfile::tempdir()?;
    write_pool(&random_pool(2_000, 8, 1)?, &dir.path().join("pool.bin"))?;
    write_pool(&random_pool(500, 8, 2)?, &dir.path().join("train.bin"))?;
    write_pool(&random_pool(100, 8, 3)?, &dir.path().join("candidates.bin"))?;
    let labeled =
        LabeledPool::new((0..30).collect(), (0..30).map(|i| (i % 2) as u32).collect())?;
    write_labels(&labeled, &dir.path().join("labels.csv"))?;

    let spec = PipelineSpec {
        seed: 7,
        artifact_dir: dir.path().join("artifacts"),
        base_dir: dir.path().to_path_buf(),
        stages: vec![
            Stage::Index(IndexStage {
                input: "pool.bin".into(),
                config: Default::default(),
                out: "idx.bin".into(),
            }),
            Stage::Select(SelectStage {
                index: "idx.bin".into(),
                labels: "labels.csv".into(),
                config: AlConfig { batch_size: 20, ..AlConfig::default() },
                out: "batch.csv".into(),
            }),
            Stage::Ood(OodStage {
                train: "train.bin".into(),
                candidates: "candidates.bin".into(),
                config: GmmConfig { k: 2, ..GmmConfig::default() },
                tau: None,
                model_out: None,
                out: "scores.csv".into(),
            }),
        ],
    };

    let first = run_pipeline(&spec)?;
    for entry in &first.entries {
        for artifact in &entry.outputs {
            println!(
                "{:<7} {:<12} crc64 {}",
                entry.stage,
                artifact.path,
                artifact.checksum.as_deref().unwrap_or("-"),
            );
        }
    }
    let second = run_pipeline(&spec)?;
    println!(
        "rerun checksums identical: {}",
        first.entries.iter().zip(&second.entries).all(|(a, b)| a.outputs == b.outputs)
    );
    Ok(())
}
