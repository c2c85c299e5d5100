//! Runs a small labeling loop: seed a few labels, then alternate K-Center
//! acquisition with probe retraining and watch holdout accuracy climb.

use curatekit::al::{select_batch, train_probe, AlConfig, AlStrategy};
use curatekit::bench::{gen_synthetic, SyntheticTask};
use curatekit::index::{build_index, IndexConfig, IndexKind};
use curatekit::pool::LabeledPool;

fn main() -> curatekit::Result<()> {
    let task = SyntheticTask { separation: 3.0, ..SyntheticTask::default() };
    let data = gen_synthetic(20_000, 32, &task, 1)?;
    let index = build_index(&data.pool, IndexConfig::new(IndexKind::Flat))?;

    let mut labeled = LabeledPool::new(Vec::new(), Vec::new())?;
    for id in 0..20u64 {
        labeled.push(id, data.label_of(id))?;
    }

    let config = AlConfig {
        strategy: AlStrategy::KCenter,
        batch_size: 50,
        candidate_pool_size: 5_000,
        ..AlConfig::default()
    };
    for round in 0..8 {
        let vectors = index.reconstruct_batch(labeled.ids())?;
        let probe = train_probe(&labeled, &vectors)?;
        let holdout = index.reconstruct_batch(&data.holdout_ids)?;
        let truth: Vec<u32> = data.holdout_ids.iter().map(|&id| data.label_of(id)).collect();
        let acc = probe.accuracy(&holdout, &truth)?;
        println!("round {round}: {} labels, holdout accuracy {acc:.3}", labeled.len());

        let batch = select_batch(&index, &labeled, Some(&probe), &config)?;
        for &id in &batch.ids {
            labeled.push(id, data.label_of(id))?;
        }
    }
    Ok(())
}
