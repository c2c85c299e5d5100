//! Measures K-Center batch-selection wall-clock across pool sizes (the
//! selection cost is governed by the candidate sample, not the pool) and
//! prints a small learning-curve comparison.

use curatekit::al::AlStrategy;
use curatekit::bench::{run_al_loop, run_scaling_bench, BenchConfig, PeakAlloc, SyntheticTask};
use curatekit::index::IndexKind;

#[global_allocator]
static ALLOC: PeakAlloc = PeakAlloc;

fn main() -> curatekit::Result<()> {
    let config = BenchConfig {
        scales: vec![10_000, 50_000],
        dims: vec![32],
        strategies: vec![AlStrategy::KCenter],
        candidate_pool_size: 2_000,
        label_budget: 300,
        round_size: 100,
        seeds: vec![1, 2],
        task: SyntheticTask { separation: 3.0, positive_fraction: 0.1, ..SyntheticTask::default() },
        force_index: Some(IndexKind::Flat),
        include_exhaustive: true,
        ..BenchConfig::default()
    };

    println!("scaling (median of 3):");
    for row in run_scaling_bench(&config)? {
        println!(
            "  {:<13} N={:<6} {:.3}s  peak {:.1} MiB  [{}]",
            row.strategy,
            row.scale,
            row.wall_clock_s,
            row.peak_mem_bytes as f64 / (1024.0 * 1024.0),
            row.index_kind,
        );
    }

    println!("learning curves (seed 1):");
    for p in run_al_loop(&config)?.iter().filter(|p| p.seed == 1) {
        println!("  {:<8} N={:<6} labels={:<4} auc={:.4}", p.strategy, p.scale, p.labels_used, p.metric);
    }
    Ok(())
}
