//! Builds Flat and IVF-Flat indexes over the same pool and compares exact
//! search against approximate search at increasing probe counts.

use curatekit::index::{build_index, IndexConfig, IndexKind};
use curatekit::pool::VectorPool;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn main() -> curatekit::Result<()> {
    let (n, dim, k) = (20_000, 32, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let data: Vec<f32> = (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let pool = VectorPool::new(dim, data)?;

    let flat = build_index(&pool, IndexConfig::new(IndexKind::Flat))?;
    let queries: Vec<Vec<f32>> =
        (0..200).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();

    println!("{n} vectors, d={dim}, 200 queries, k={k}");
    for nprobe in [1, 4, 8, 16] {
        let config = IndexConfig { nprobe, ..IndexConfig::new(IndexKind::IvfFlat) };
        let ivf = build_index(&pool, config)?;
        let mut hits = 0usize;
        for q in &queries {
            let exact: Vec<u64> = flat.search(q, k)?.iter().map(|x| x.id).collect();
            let approx = ivf.search(q, k)?;
            hits += approx.iter().filter(|x| exact.contains(&x.id)).count();
        }
        let recall = hits as f64 / (queries.len() * k) as f64;
        println!(
            "ivf_flat nprobe={nprobe:>2}: recall@{k} = {recall:.3}  ({} bytes)",
            ivf.memory_bytes()
        );
    }
    Ok(())
}
