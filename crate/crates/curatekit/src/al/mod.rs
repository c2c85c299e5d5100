//! Scalable active-learning selection over an ANN index.
//!
//! Two families: K-Center greedy confined to a random candidate pool of size
//! `N_c`, and localized acquisition that scores only the `K_s`-neighborhood
//! of the labeled set instead of the full pool. Batch cost is governed by
//! `N_c`/`K_s`, not the pool size.

mod probe;

pub use probe::{train_probe, ProbeModel, PROBE_GRAD_TOL, PROBE_MAX_EPOCHS};

use std::collections::HashSet;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::AnnIndex;
use crate::kmeans::{kmeans, kmeans_weighted};
use crate::matrix::{l2_sq, Matrix};
use crate::pool::LabeledPool;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlStrategy {
    KCenter,
    Margin,
    Entropy,
    Representative,
    InformativeClusterDiverse,
    Random,
}

impl AlStrategy {
    pub fn needs_probe(self) -> bool {
        matches!(
            self,
            AlStrategy::Margin
                | AlStrategy::Entropy
                | AlStrategy::Representative
                | AlStrategy::InformativeClusterDiverse
        )
    }
}

impl std::fmt::Display for AlStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AlStrategy::KCenter => "kcenter",
            AlStrategy::Margin => "margin",
            AlStrategy::Entropy => "entropy",
            AlStrategy::Representative => "representative",
            AlStrategy::InformativeClusterDiverse => "informative_cluster_diverse",
            AlStrategy::Random => "random",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for AlStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "kcenter" | "k_center" => Ok(AlStrategy::KCenter),
            "margin" => Ok(AlStrategy::Margin),
            "entropy" => Ok(AlStrategy::Entropy),
            "representative" => Ok(AlStrategy::Representative),
            "informative_cluster_diverse" | "icd" => Ok(AlStrategy::InformativeClusterDiverse),
            "random" => Ok(AlStrategy::Random),
            other => Err(Error::InvalidConfig(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyKind {
    Margin,
    Entropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlConfig {
    pub strategy: AlStrategy,
    /// Batch size B.
    pub batch_size: usize,
    /// Candidate pool size N_c for K-Center.
    pub candidate_pool_size: usize,
    /// Local neighborhood size K_s for localized strategies.
    pub neighborhood_size: usize,
    /// Issue one neighborhood query per class instead of one global centroid.
    pub per_class_centroids: bool,
    pub rng_seed: u64,
}

impl Default for AlConfig {
    fn default() -> Self {
        Self {
            strategy: AlStrategy::KCenter,
            batch_size: 100,
            candidate_pool_size: 10_000,
            neighborhood_size: 1_000,
            per_class_centroids: false,
            rng_seed: 0,
        }
    }
}

impl AlConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        match self.strategy {
            AlStrategy::KCenter if self.batch_size > self.candidate_pool_size => {
                Err(Error::InvalidConfig("batch_size exceeds candidate_pool_size".into()))
            }
            s if s.needs_probe() && self.batch_size > self.neighborhood_size => {
                Err(Error::InvalidConfig("batch_size exceeds neighborhood_size".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Result of one selection round.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    pub ids: Vec<u64>,
    /// Per-id acquisition score (strategy-specific).
    pub scores: Vec<f64>,
    /// Set when fewer than `batch_size` candidates were available.
    pub truncated: bool,
    /// How many candidates the probe scored this round; bounded by K_s for
    /// localized strategies, 0 for K-Center and Random.
    pub scored_count: usize,
}

/// Unlabeled neighborhood of the labeled set, with full-precision vectors.
#[derive(Debug, Clone)]
pub struct LocalizedCandidates {
    pub ids: Vec<u64>,
    pub vectors: Matrix,
}

/// Finds the unlabeled neighborhood of the labeled set's centroid.
///
/// The query is the centroid of the reconstructed labeled vectors; with
/// `per_class` set, one query per class is issued and the neighborhoods are
/// unioned. Labeled ids are removed from the result.
pub fn localized_candidates(
    index: &AnnIndex,
    labeled: &LabeledPool,
    vectors_of_labeled: &Matrix,
    k_s: usize,
    per_class: bool,
) -> Result<LocalizedCandidates> {
    if labeled.is_empty() {
        return Err(Error::LabeledPool("localized search requires a non-empty labeled pool".into()));
    }
    if k_s == 0 {
        return Err(Error::InvalidConfig("neighborhood size must be positive".into()));
    }
    let k = k_s.min(index.size());

    let mut queries: Vec<Vec<f32>> = Vec::new();
    if per_class {
        let mut classes: Vec<u32> = labeled.labels().to_vec();
        classes.sort_unstable();
        classes.dedup();
        for class in classes {
            let rows: Vec<usize> = labeled
                .labels()
                .iter()
                .enumerate()
                .filter(|&(_, &y)| y == class)
                .map(|(i, _)| i)
                .collect();
            let mut m = Matrix::empty(vectors_of_labeled.dim());
            for r in rows {
                m.push_row(vectors_of_labeled.row(r));
            }
            queries.push(m.centroid()?);
        }
    } else {
        queries.push(vectors_of_labeled.centroid()?);
    }

    let labeled_ids: HashSet<u64> = labeled.ids().iter().copied().collect();
    let mut seen = HashSet::new();
    let mut ids = Vec::new();
    for q in &queries {
        for hit in index.search(q, k)? {
            if !labeled_ids.contains(&hit.id) && seen.insert(hit.id) {
                ids.push(hit.id);
            }
        }
    }
    let vectors = index.reconstruct_batch(&ids)?;
    Ok(LocalizedCandidates { ids, vectors })
}

/// Uncertainty per row, higher = more uncertain.
///
/// Margin is `1 - (p1 - p2)` over the top-2 class probabilities; entropy is
/// `-sum p ln p` in nats.
pub fn score_uncertainty(
    model: &ProbeModel,
    vectors: &Matrix,
    kind: UncertaintyKind,
) -> Result<Vec<f64>> {
    let mut scores = Vec::with_capacity(vectors.rows());
    for v in vectors.iter_rows() {
        let mut probs = model.predict_proba(v)?;
        scores.push(match kind {
            UncertaintyKind::Margin => {
                probs.sort_by(|a, b| b.total_cmp(a));
                let p1 = probs.first().copied().unwrap_or(1.0);
                let p2 = probs.get(1).copied().unwrap_or(0.0);
                1.0 - (p1 - p2)
            }
            UncertaintyKind::Entropy => {
                -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
            }
        });
    }
    Ok(scores)
}

fn unlabeled_ids(index: &AnnIndex, labeled: &LabeledPool) -> Vec<u64> {
    let labeled_set: HashSet<u64> = labeled.ids().iter().copied().collect();
    let mut ids: Vec<u64> = index.ids().into_iter().filter(|id| !labeled_set.contains(id)).collect();
    ids.sort_unstable();
    ids
}

/// K-Center greedy over a fresh random candidate pool of size `N_c`.
///
/// Each pick maximizes the minimum distance to the labeled set plus the picks
/// so far; ties break toward the lowest id. Runtime depends on `N_c` and `B`,
/// not on the pool size.
pub fn kcenter_select(
    index: &AnnIndex,
    labeled: &LabeledPool,
    config: &AlConfig,
) -> Result<SelectionOutcome> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let total = index.size();
    let labeled_set: HashSet<u64> = labeled.ids().iter().copied().collect();
    // Rejection-sample storage rows when the request covers at most half the
    // pool; that keeps the per-batch cost a function of N_c, not of the pool
    // size. Dense requests fall back to materializing the unlabeled set.
    let sparse = config
        .candidate_pool_size
        .saturating_add(labeled_set.len())
        .saturating_mul(2)
        <= total;
    let candidate_ids: Vec<u64> = if sparse {
        let n_c = config.candidate_pool_size;
        let mut chosen = HashSet::with_capacity(n_c);
        let mut ids = Vec::with_capacity(n_c);
        while ids.len() < n_c {
            let id = index.id_at(rng.gen_range(0..total));
            if !labeled_set.contains(&id) && chosen.insert(id) {
                ids.push(id);
            }
        }
        ids
    } else {
        let unlabeled = unlabeled_ids(index, labeled);
        if unlabeled.is_empty() {
            return Err(Error::LabeledPool("no unlabeled points remain".into()));
        }
        let n_c = config.candidate_pool_size.min(unlabeled.len());
        if n_c == unlabeled.len() {
            unlabeled
        } else {
            rand::seq::index::sample(&mut rng, unlabeled.len(), n_c)
                .into_iter()
                .map(|i| unlabeled[i])
                .collect()
        }
    };
    let candidates = index.reconstruct_batch(&candidate_ids)?;
    let centers = index.reconstruct_batch(labeled.ids())?;

    let mut min_dist: Vec<f32> = if centers.rows() == 0 {
        vec![f32::INFINITY; candidates.rows()]
    } else {
        candidates
            .iter_rows()
            .map(|v| {
                centers
                    .iter_rows()
                    .map(|c| l2_sq(v, c))
                    .fold(f32::INFINITY, f32::min)
                    .sqrt()
            })
            .collect()
    };

    let b = config.batch_size.min(candidate_ids.len());
    let truncated = b < config.batch_size;
    let mut picked = vec![false; candidate_ids.len()];
    let mut ids = Vec::with_capacity(b);
    let mut scores = Vec::with_capacity(b);
    for _ in 0..b {
        let best = (0..candidate_ids.len())
            .filter(|&i| !picked[i])
            .max_by(|&a, &b| {
                min_dist[a]
                    .total_cmp(&min_dist[b])
                    .then(candidate_ids[b].cmp(&candidate_ids[a]))
            })
            .expect("candidates remain");
        picked[best] = true;
        ids.push(candidate_ids[best]);
        scores.push(min_dist[best] as f64);
        let center = candidates.row(best).to_vec();
        for (i, v) in candidates.iter_rows().enumerate() {
            if !picked[i] {
                let d = l2_sq(v, &center).sqrt();
                if d < min_dist[i] {
                    min_dist[i] = d;
                }
            }
        }
    }
    Ok(SelectionOutcome { ids, scores, truncated, scored_count: 0 })
}

/// Dispatches one selection round for any strategy.
///
/// Localized strategies retry with a doubled neighborhood (up to 3 times)
/// when every neighbor is already labeled, then return a partial batch.
pub fn select_batch(
    index: &AnnIndex,
    labeled: &LabeledPool,
    model: Option<&ProbeModel>,
    config: &AlConfig,
) -> Result<SelectionOutcome> {
    config.validate()?;
    match config.strategy {
        AlStrategy::KCenter => kcenter_select(index, labeled, config),
        AlStrategy::Random => {
            let unlabeled = unlabeled_ids(index, labeled);
            if unlabeled.is_empty() {
                return Err(Error::LabeledPool("no unlabeled points remain".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
            let b = config.batch_size.min(unlabeled.len());
            let ids: Vec<u64> = rand::seq::index::sample(&mut rng, unlabeled.len(), b)
                .into_iter()
                .map(|i| unlabeled[i])
                .collect();
            let scores = vec![0.0; ids.len()];
            Ok(SelectionOutcome {
                truncated: b < config.batch_size,
                scored_count: 0,
                ids,
                scores,
            })
        }
        _ => {
            let model = model.ok_or_else(|| {
                Error::InvalidConfig(format!("strategy {} requires a probe model", config.strategy))
            })?;
            let labeled_vectors = index.reconstruct_batch(labeled.ids())?;
            let mut k_s = config.neighborhood_size;
            let mut candidates = localized_candidates(
                index,
                labeled,
                &labeled_vectors,
                k_s,
                config.per_class_centroids,
            )?;
            for _ in 0..3 {
                if !candidates.ids.is_empty() || k_s >= index.size() {
                    break;
                }
                k_s = (k_s * 2).min(index.size());
                candidates = localized_candidates(
                    index,
                    labeled,
                    &labeled_vectors,
                    k_s,
                    config.per_class_centroids,
                )?;
            }
            if candidates.ids.is_empty() {
                return Ok(SelectionOutcome {
                    ids: vec![],
                    scores: vec![],
                    truncated: true,
                    scored_count: 0,
                });
            }
            select_from_candidates(model, &candidates, labeled, &labeled_vectors, config)
        }
    }
}

fn select_from_candidates(
    model: &ProbeModel,
    candidates: &LocalizedCandidates,
    _labeled: &LabeledPool,
    labeled_vectors: &Matrix,
    config: &AlConfig,
) -> Result<SelectionOutcome> {
    let n = candidates.ids.len();
    let b = config.batch_size.min(n);
    let truncated = b < config.batch_size;
    let kind = if config.strategy == AlStrategy::Entropy {
        UncertaintyKind::Entropy
    } else {
        UncertaintyKind::Margin
    };
    let uncertainty = score_uncertainty(model, &candidates.vectors, kind)?;
    let scored_count = n;

    // Candidate indexes ranked most-uncertain first, ties toward lower id.
    let mut ranked: Vec<usize> = (0..n).collect();
    ranked.sort_by(|&a, &b| {
        uncertainty[b]
            .total_cmp(&uncertainty[a])
            .then(candidates.ids[a].cmp(&candidates.ids[b]))
    });

    let pick = |idxs: &[usize]| -> SelectionOutcome {
        SelectionOutcome {
            ids: idxs.iter().map(|&i| candidates.ids[i]).collect(),
            scores: idxs.iter().map(|&i| uncertainty[i]).collect(),
            truncated,
            scored_count,
        }
    };

    match config.strategy {
        AlStrategy::Margin | AlStrategy::Entropy => Ok(pick(&ranked[..b])),
        AlStrategy::Representative => {
            // Cluster the 3B most uncertain candidates and keep one medoid each.
            let m = (3 * config.batch_size).min(n);
            let shortlist = &ranked[..m];
            let k = b.min(m);
            let mut subset = Matrix::empty(candidates.vectors.dim());
            for &i in shortlist {
                subset.push_row(candidates.vectors.row(i));
            }
            let fit = kmeans(&subset, k, 25, config.rng_seed)?;
            let medoids = cluster_medoids(&subset, &fit.centroids, &fit.assignments, shortlist, candidates);
            Ok(pick(&medoids))
        }
        AlStrategy::InformativeClusterDiverse => {
            // Reconstruction of the paper's undefined strategy:
            // uncertainty-weighted clustering, then a max-min diversity
            // re-rank of the cluster medoids against the labeled set.
            let k = b.min(n);
            let weights: Vec<f32> = uncertainty.iter().map(|&u| (u as f32).max(1e-6)).collect();
            let fit = kmeans_weighted(&candidates.vectors, Some(&weights), k, 25, config.rng_seed)?;
            let all: Vec<usize> = (0..n).collect();
            let medoids =
                cluster_medoids(&candidates.vectors, &fit.centroids, &fit.assignments, &all, candidates);
            let ordered = max_min_order(&medoids, candidates, labeled_vectors);
            Ok(pick(&ordered))
        }
        _ => unreachable!("dispatched above"),
    }
}

/// One medoid per non-empty cluster: the member nearest its centroid, ties
/// toward the lowest id. `rows` maps subset rows back to candidate indexes.
fn cluster_medoids(
    subset: &Matrix,
    centroids: &Matrix,
    assignments: &[usize],
    rows: &[usize],
    candidates: &LocalizedCandidates,
) -> Vec<usize> {
    let k = centroids.rows();
    let mut best: Vec<Option<(f32, usize)>> = vec![None; k];
    for (sub_row, &cand_idx) in rows.iter().enumerate() {
        let c = assignments[sub_row];
        let d = l2_sq(subset.row(sub_row), centroids.row(c));
        let better = match best[c] {
            None => true,
            Some((bd, bi)) => {
                d < bd || (d == bd && candidates.ids[cand_idx] < candidates.ids[bi])
            }
        };
        if better {
            best[c] = Some((d, cand_idx));
        }
    }
    best.into_iter().flatten().map(|(_, i)| i).collect()
}

/// Greedy max-min ordering of candidate indexes against the labeled vectors.
fn max_min_order(
    idxs: &[usize],
    candidates: &LocalizedCandidates,
    labeled_vectors: &Matrix,
) -> Vec<usize> {
    let mut min_dist: Vec<f32> = idxs
        .iter()
        .map(|&i| {
            let v = candidates.vectors.row(i);
            labeled_vectors
                .iter_rows()
                .map(|c| l2_sq(v, c))
                .fold(f32::INFINITY, f32::min)
        })
        .collect();
    let mut remaining: Vec<usize> = (0..idxs.len()).collect();
    let mut out = Vec::with_capacity(idxs.len());
    while !remaining.is_empty() {
        let (pos, &slot) = remaining
            .iter()
            .enumerate()
            .max_by(|(_, &a), (_, &b)| {
                min_dist[a]
                    .total_cmp(&min_dist[b])
                    .then(candidates.ids[idxs[b]].cmp(&candidates.ids[idxs[a]]))
            })
            .expect("non-empty");
        remaining.remove(pos);
        out.push(idxs[slot]);
        let center = candidates.vectors.row(idxs[slot]).to_vec();
        for &other in &remaining {
            let d = l2_sq(candidates.vectors.row(idxs[other]), &center);
            if d < min_dist[other] {
                min_dist[other] = d;
            }
        }
    }
    out
}
