//! Scalability and sample-efficiency benchmark harness.
//!
//! Generates synthetic classification pools, runs active-learning loops that
//! emit learning-curve points, and times single batch selections across
//! dataset scales with an allocator high-water mark for peak memory.

use std::alloc::{GlobalAlloc, Layout, System};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::al::{kcenter_select, select_batch, train_probe, AlConfig, AlStrategy, ProbeModel};
use crate::error::{Error, Result};
use crate::index::{build_index, AnnIndex, IndexConfig, IndexKind};
use crate::matrix::Matrix;
use crate::pool::{LabeledPool, VectorPool};

// ---------------------------------------------------------------------------
// Peak-memory instrumentation

static CURRENT_BYTES: AtomicUsize = AtomicUsize::new(0);
static PEAK_BYTES: AtomicUsize = AtomicUsize::new(0);

/// Counting allocator; install with `#[global_allocator]` in a binary to make
/// `peak_memory_bytes` meaningful. Without installation both readings stay 0.
pub struct PeakAlloc;

unsafe impl GlobalAlloc for PeakAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            let now = CURRENT_BYTES.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK_BYTES.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        CURRENT_BYTES.fetch_sub(layout.size(), Ordering::Relaxed);
    }
}

/// Resets the high-water mark to current usage.
pub fn reset_peak_memory() {
    PEAK_BYTES.store(CURRENT_BYTES.load(Ordering::Relaxed), Ordering::Relaxed);
}

pub fn peak_memory_bytes() -> usize {
    PEAK_BYTES.load(Ordering::Relaxed)
}

// ---------------------------------------------------------------------------
// Synthetic task

/// Binary classification task: a shared mixture of Gaussian clusters, with
/// class 1 shifted `separation` standard deviations along one fixed random
/// direction. Separation 0 makes the classes indistinguishable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticTask {
    pub clusters: usize,
    pub separation: f32,
    /// Probability that a revealed label is flipped.
    pub label_noise: f64,
    /// Class-1 prior; values below 0.5 make the positive class rare.
    pub positive_fraction: f64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        Self { clusters: 5, separation: 6.0, label_noise: 0.0, positive_fraction: 0.5 }
    }
}

/// A generated pool with hidden labels and a 10% held-out evaluation split.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub pool: VectorPool,
    /// Hidden label per row (the labeling oracle).
    pub labels: Vec<u32>,
    /// Row ids available for indexing/selection.
    pub train_ids: Vec<u64>,
    /// Row ids reserved for AUC evaluation.
    pub holdout_ids: Vec<u64>,
}

impl SyntheticData {
    pub fn label_of(&self, id: u64) -> u32 {
        self.labels[id as usize]
    }
}

/// Deterministically generates an `n x d` pool for `task` under `seed`.
pub fn gen_synthetic(n: usize, d: usize, task: &SyntheticTask, seed: u64) -> Result<SyntheticData> {
    if n < 100 {
        return Err(Error::InvalidConfig(format!("synthetic pool needs n >= 100, got {n}")));
    }
    if task.clusters == 0 || d == 0 {
        return Err(Error::InvalidConfig("clusters and dim must be positive".into()));
    }
    if !(0.0..=1.0).contains(&task.label_noise) {
        return Err(Error::InvalidConfig("label_noise outside [0, 1]".into()));
    }
    if !(0.0..=1.0).contains(&task.positive_fraction) {
        return Err(Error::InvalidConfig("positive_fraction outside [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng| -> f32 {
        let u1: f64 = rng.gen_range(1e-12..1.0);
        let u2: f64 = rng.gen();
        ((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()) as f32
    };

    // Shared cluster centers plus a unit class-shift direction.
    let centers: Vec<Vec<f32>> = (0..task.clusters)
        .map(|_| (0..d).map(|_| normal(&mut rng) * 2.0).collect())
        .collect();
    let mut shift: Vec<f32> = (0..d).map(|_| normal(&mut rng)).collect();
    let norm = shift.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-12);
    for s in &mut shift {
        *s *= task.separation / norm;
    }

    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.gen_range(0..task.clusters);
        let mut y = u32::from(rng.gen::<f64>() < task.positive_fraction);
        let point_class = y;
        if task.label_noise > 0.0 && rng.gen_bool(task.label_noise) {
            y = 1 - y;
        }
        for j in 0..d {
            let mut v = centers[c][j] + normal(&mut rng);
            if point_class == 1 {
                v += shift[j];
            }
            data.push(v);
        }
        labels.push(y);
    }
    let pool = VectorPool::new(d, data)?;

    let holdout_n = n / 10;
    let holdout: Vec<usize> = rand::seq::index::sample(&mut rng, n, holdout_n).into_vec();
    let mut is_holdout = vec![false; n];
    for &i in &holdout {
        is_holdout[i] = true;
    }
    let train_ids: Vec<u64> =
        (0..n as u64).filter(|&i| !is_holdout[i as usize]).collect();
    let mut holdout_ids: Vec<u64> = holdout.into_iter().map(|i| i as u64).collect();
    holdout_ids.sort_unstable();
    Ok(SyntheticData { pool, labels, train_ids, holdout_ids })
}

/// Area under the ROC curve via the rank statistic; ties get half credit.
pub fn auc(scores: &[f64], labels: &[u32]) -> f64 {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return 0.5;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average ranks across tied scores.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 1) as f64 / 2.0; // ranks are 1-based
        for &idx in &order[i..j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    (rank_sum_pos - pos as f64 * (pos as f64 + 1.0) / 2.0) / (pos as f64 * neg as f64)
}

// ---------------------------------------------------------------------------
// Config

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// Pool sizes, ascending.
    pub scales: Vec<usize>,
    pub dims: Vec<usize>,
    /// Index switchover points: below `ivf_flat_from` use Flat, then
    /// IVF-Flat, then IVF-PQ from `ivf_pq_from`.
    pub ivf_flat_from: usize,
    pub ivf_pq_from: usize,
    /// Overrides the progression entirely when set.
    pub force_index: Option<IndexKind>,
    pub strategies: Vec<AlStrategy>,
    /// Labels acquired after seeding; the seed set is 1% of the pool.
    pub label_budget: usize,
    /// Batch size per selection round.
    pub round_size: usize,
    pub seeds: Vec<u64>,
    pub task: SyntheticTask,
    pub candidate_pool_size: usize,
    pub neighborhood_size: usize,
    /// Adds a full-pool exhaustive K-Center baseline to the scaling bench.
    pub include_exhaustive: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            scales: vec![10_000, 100_000],
            dims: vec![128],
            ivf_flat_from: 100_000,
            ivf_pq_from: 1_000_000,
            force_index: None,
            strategies: vec![AlStrategy::KCenter, AlStrategy::Random],
            label_budget: 1_000,
            round_size: 100,
            seeds: vec![0, 1],
            task: SyntheticTask::default(),
            candidate_pool_size: 10_000,
            neighborhood_size: 1_000,
            include_exhaustive: false,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() || self.scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("scales must be non-empty and ascending".into()));
        }
        if self.dims.is_empty() {
            return Err(Error::InvalidConfig("dims must be non-empty".into()));
        }
        if self.seeds.len() < 2 {
            return Err(Error::InvalidConfig("need at least 2 seeds for curve bands".into()));
        }
        if self.round_size == 0 {
            return Err(Error::InvalidConfig("round_size must be positive".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::InvalidConfig("strategies must be non-empty".into()));
        }
        Ok(())
    }

    pub fn index_kind_for(&self, n: usize) -> IndexKind {
        if let Some(kind) = self.force_index {
            return kind;
        }
        if n >= self.ivf_pq_from {
            IndexKind::IvfPq
        } else if n >= self.ivf_flat_from {
            IndexKind::IvfFlat
        } else {
            IndexKind::Flat
        }
    }
}

// ---------------------------------------------------------------------------
// Learning curves

/// One learning-curve sample. `flag` is empty for healthy rows; failed runs
/// keep their row with the error message so curves have no silent gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub strategy: String,
    pub scale: usize,
    pub seed: u64,
    /// Labels acquired beyond the seed set; nondecreasing within a run.
    pub labels_used: usize,
    /// Held-out ROC AUC of the probe.
    pub metric: f64,
    pub wall_clock_s: f64,
    pub peak_mem_bytes: u64,
    pub flag: String,
}

fn seed_labeled_pool(
    data: &SyntheticData,
    n_seed: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LabeledPool> {
    let n_seed = n_seed.clamp(2, data.train_ids.len());
    // Resample until both classes appear so the probe can train.
    for _ in 0..100 {
        let picks = rand::seq::index::sample(rng, data.train_ids.len(), n_seed);
        let ids: Vec<u64> = picks.into_iter().map(|i| data.train_ids[i]).collect();
        let labels: Vec<u32> = ids.iter().map(|&id| data.label_of(id)).collect();
        let mut distinct = labels.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() >= 2 {
            let mut sorted: Vec<(u64, u32)> =
                ids.into_iter().zip(labels).collect();
            sorted.sort_unstable();
            let (ids, labels) = sorted.into_iter().unzip();
            return Ok(LabeledPool::new(ids, labels)?);
        }
    }
    Err(Error::LabeledPool("could not seed both classes in 100 draws".into()))
}

fn holdout_auc(model: &ProbeModel, data: &SyntheticData, holdout: &Matrix) -> Result<f64> {
    let pos_slot = model.classes().iter().position(|&c| c == 1);
    let mut scores = Vec::with_capacity(holdout.rows());
    for v in holdout.iter_rows() {
        let p = model.predict_proba(v)?;
        scores.push(pos_slot.map_or(0.0, |s| p[s]));
    }
    let labels: Vec<u32> = data.holdout_ids.iter().map(|&id| data.label_of(id)).collect();
    Ok(auc(&scores, &labels))
}

/// Runs one active-learning loop and returns its curve.
///
/// Seeds 1% random labels, then acquires `round_size` labels per round until
/// `label_budget`, retraining the probe and recording held-out AUC after
/// every (re)train. Budget 0 yields only the seed point.
pub fn run_al_cell(
    data: &SyntheticData,
    index: &AnnIndex,
    strategy: AlStrategy,
    config: &BenchConfig,
    scale: usize,
    seed: u64,
) -> Vec<CurvePoint> {
    let mut points = Vec::new();
    let fail = |points: &mut Vec<CurvePoint>, labels_used: usize, msg: String| {
        points.push(CurvePoint {
            strategy: strategy.to_string(),
            scale,
            seed,
            labels_used,
            metric: f64::NAN,
            wall_clock_s: 0.0,
            peak_mem_bytes: 0,
            flag: msg,
        });
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa1_100f);
    let n_seed = (scale / 100).max(2);
    let mut labeled = match seed_labeled_pool(data, n_seed, &mut rng) {
        Ok(l) => l,
        Err(e) => {
            fail(&mut points, 0, e.to_string());
            return points;
        }
    };
    let holdout = match index_free_rows(data, &data.holdout_ids) {
        Ok(h) => h,
        Err(e) => {
            fail(&mut points, 0, e.to_string());
            return points;
        }
    };

    let al_config = AlConfig {
        strategy,
        batch_size: config.round_size,
        candidate_pool_size: config.candidate_pool_size,
        neighborhood_size: config.neighborhood_size,
        per_class_centroids: false,
        rng_seed: seed,
    };
    let mut acquired = 0usize;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x401_5e);
    loop {
        reset_peak_memory();
        let started = Instant::now();
        let model = match train_probe(&labeled, &index_vectors(index, &labeled)) {
            Ok(m) => m,
            Err(e) => {
                fail(&mut points, acquired, e.to_string());
                return points;
            }
        };
        let metric = match holdout_auc(&model, data, &holdout) {
            Ok(a) => a,
            Err(e) => {
                fail(&mut points, acquired, e.to_string());
                return points;
            }
        };
        points.push(CurvePoint {
            strategy: strategy.to_string(),
            scale,
            seed,
            labels_used: acquired,
            metric,
            wall_clock_s: started.elapsed().as_secs_f64(),
            peak_mem_bytes: peak_memory_bytes() as u64,
            flag: String::new(),
        });
        if acquired + config.round_size > config.label_budget {
            break;
        }
        let round_cfg = AlConfig { rng_seed: seed ^ (acquired as u64) << 8, ..al_config.clone() };
        let outcome = match select_batch(index, &labeled, Some(&model).filter(|_| strategy.needs_probe()), &round_cfg)
        {
            Ok(o) => o,
            Err(e) => {
                fail(&mut points, acquired, e.to_string());
                return points;
            }
        };
        if outcome.ids.is_empty() {
            break;
        }
        for id in outcome.ids {
            let mut y = data.label_of(id);
            if config.task.label_noise > 0.0 && noise_rng.gen_bool(config.task.label_noise) {
                y = 1 - y;
            }
            if labeled.push(id, y).is_ok() {
                acquired += 1;
            }
        }
    }
    points
}

fn index_vectors(index: &AnnIndex, labeled: &LabeledPool) -> Matrix {
    index
        .reconstruct_batch(labeled.ids())
        .expect("labeled ids originate from the index")
}

fn index_free_rows(data: &SyntheticData, ids: &[u64]) -> Result<Matrix> {
    let mut m = Matrix::empty(data.pool.dim());
    for &id in ids {
        m.push_row(data.pool.vector(id as usize));
    }
    Ok(m)
}

/// Full learning-curve sweep over (strategy, scale, seed).
pub fn run_al_loop(config: &BenchConfig) -> Result<Vec<CurvePoint>> {
    config.validate()?;
    let d = config.dims[0];
    let mut points = Vec::new();
    for &scale in &config.scales {
        for &seed in &config.seeds {
            let data = gen_synthetic(scale, d, &config.task, seed)?;
            let index = build_train_index(&data, config.index_kind_for(scale))?;
            for &strategy in &config.strategies {
                points.extend(run_al_cell(&data, &index, strategy, config, scale, seed));
            }
        }
    }
    Ok(points)
}

/// Builds the AL index over the train split only (holdout stays unseen).
pub fn build_train_index(data: &SyntheticData, kind: IndexKind) -> Result<AnnIndex> {
    let dim = data.pool.dim();
    let mut rows = Vec::with_capacity(data.train_ids.len() * dim);
    for &id in &data.train_ids {
        rows.extend_from_slice(data.pool.vector(id as usize));
    }
    let pool = VectorPool::with_ids(dim, rows, data.train_ids.clone())?;
    build_index(&pool, IndexConfig::new(kind))
}

// ---------------------------------------------------------------------------
// Scaling bench

/// One scaling measurement; schema fixed as
/// strategy,scale,dim,index_kind,wall_clock_s,peak_mem_bytes,seed.
/// Failed cells keep their row with wall_clock_s = -1 and the index_kind
/// column prefixed `failed:` — no silent gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub strategy: String,
    pub scale: usize,
    pub dim: usize,
    pub index_kind: String,
    pub wall_clock_s: f64,
    pub peak_mem_bytes: u64,
    pub seed: u64,
}

/// Times one batch selection per (strategy, scale, dim), median of 3 runs.
pub fn run_scaling_bench(config: &BenchConfig) -> Result<Vec<ScalingRow>> {
    config.validate()?;
    let seed = config.seeds[0];
    let mut rows = Vec::new();
    for &scale in &config.scales {
        for &dim in &config.dims {
            let data = gen_synthetic(scale, dim, &config.task, seed)?;
            let kind = config.index_kind_for(scale);
            let index = build_train_index(&data, kind)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ca1e);
            let labeled = seed_labeled_pool(&data, 100, &mut rng)?;
            let probe = train_probe(&labeled, &index_vectors(&index, &labeled)).ok();

            let mut cells: Vec<(String, AlConfig)> = config
                .strategies
                .iter()
                .map(|&strategy| {
                    (
                        strategy.to_string(),
                        AlConfig {
                            strategy,
                            batch_size: config.round_size,
                            candidate_pool_size: config.candidate_pool_size,
                            neighborhood_size: config.neighborhood_size,
                            per_class_centroids: false,
                            rng_seed: seed,
                        },
                    )
                })
                .collect();
            if config.include_exhaustive {
                cells.push((
                    "kcenter_full".into(),
                    AlConfig {
                        strategy: AlStrategy::KCenter,
                        batch_size: config.round_size,
                        candidate_pool_size: usize::MAX,
                        neighborhood_size: config.neighborhood_size,
                        per_class_centroids: false,
                        rng_seed: seed,
                    },
                ));
            }
            for (name, al_config) in cells {
                rows.push(time_cell(
                    &name, &al_config, &index, &labeled, probe.as_ref(), scale, dim, &kind, seed,
                ));
            }
        }
    }
    Ok(rows)
}

#[allow(clippy::too_many_arguments)]
fn time_cell(
    name: &str,
    al_config: &AlConfig,
    index: &AnnIndex,
    labeled: &LabeledPool,
    probe: Option<&ProbeModel>,
    scale: usize,
    dim: usize,
    kind: &IndexKind,
    seed: u64,
) -> ScalingRow {
    let mut times = Vec::with_capacity(3);
    let mut peak = 0usize;
    for run in 0..3 {
        reset_peak_memory();
        let cfg = AlConfig { rng_seed: al_config.rng_seed ^ run, ..al_config.clone() };
        let started = Instant::now();
        let result = if al_config.candidate_pool_size == usize::MAX {
            kcenter_select(
                index,
                labeled,
                &AlConfig { candidate_pool_size: index.size(), ..cfg },
            )
        } else {
            select_batch(index, labeled, probe, &cfg)
        };
        let elapsed = started.elapsed().as_secs_f64();
        peak = peak.max(peak_memory_bytes());
        match result {
            Ok(_) => times.push(elapsed),
            Err(e) => {
                return ScalingRow {
                    strategy: name.to_string(),
                    scale,
                    dim,
                    index_kind: format!("failed:{e}"),
                    wall_clock_s: -1.0,
                    peak_mem_bytes: 0,
                    seed,
                };
            }
        }
    }
    times.sort_by(f64::total_cmp);
    ScalingRow {
        strategy: name.to_string(),
        scale,
        dim,
        index_kind: kind.to_string(),
        wall_clock_s: times[1],
        peak_mem_bytes: peak as u64,
        seed,
    }
}

// ---------------------------------------------------------------------------
// CSV output

pub fn write_curves_csv(points: &[CurvePoint], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for p in points {
        writer.serialize(p)?;
    }
    writer.flush().map_err(Error::Io)?;
    Ok(())
}

pub fn write_scaling_csv(rows: &[ScalingRow], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for r in rows {
        writer.serialize(r)?;
    }
    writer.flush().map_err(Error::Io)?;
    Ok(())
}
