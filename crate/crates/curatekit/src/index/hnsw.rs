//! Hierarchical navigable small-world graph index.
//!
//! Layered proximity graph with greedy descent through upper layers and a
//! beam search (`ef`) at layer 0. Level assignment uses the standard
//! exponential rule with multiplier `1 / ln(M)` under a seeded RNG, so builds
//! are deterministic.

use std::collections::BinaryHeap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::l2_sq;
use crate::pool::VectorPool;

use super::{HeapEntry, IndexConfig, Neighbor, SearchStats, TopK};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HnswIndex {
    pub(crate) config: IndexConfig,
    dim: usize,
    ids: Vec<u64>,
    vectors: Vec<f32>,
    /// neighbors[node][layer] -> adjacent node indices.
    neighbors: Vec<Vec<Vec<u32>>>,
    entry: u32,
    max_level: usize,
}

/// Min-heap entry ordered by ascending distance.
#[derive(PartialEq)]
struct Closest(f32, u32);

impl Eq for Closest {}

impl Ord for Closest {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Reversed for use in a max-heap as a min-heap.
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Closest {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl HnswIndex {
    pub(crate) fn build(pool: &VectorPool, config: IndexConfig) -> Result<Self> {
        let dim = pool.dim();
        let n = pool.count();
        let m = config.hnsw_m;
        let level_mult = 1.0 / (m as f64).ln();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x45_5709);

        let mut index = Self {
            config,
            dim,
            ids: pool.ids().collect(),
            vectors: pool.data().to_vec(),
            neighbors: Vec::with_capacity(n),
            entry: 0,
            max_level: 0,
        };

        for node in 0..n {
            let level = (-rng.gen::<f64>().max(f64::MIN_POSITIVE).ln() * level_mult).floor() as usize;
            index.insert(node as u32, level);
        }
        Ok(index)
    }

    fn vector(&self, node: u32) -> &[f32] {
        &self.vectors[node as usize * self.dim..(node as usize + 1) * self.dim]
    }

    fn max_degree(&self, layer: usize) -> usize {
        if layer == 0 {
            self.config.hnsw_m * 2
        } else {
            self.config.hnsw_m
        }
    }

    fn insert(&mut self, node: u32, level: usize) {
        self.neighbors.push(vec![Vec::new(); level + 1]);
        if node == 0 {
            self.entry = 0;
            self.max_level = level;
            return;
        }

        let query = self.vector(node).to_vec();
        let mut ep = self.entry;
        // Greedy descent through layers above the new node's level.
        for layer in ((level + 1)..=self.max_level).rev() {
            ep = self.greedy_closest(&query, ep, layer);
        }

        for layer in (0..=level.min(self.max_level)).rev() {
            let found = self.search_layer(&query, &[ep], self.config.ef_construction, layer);
            let selected: Vec<u32> =
                found.iter().take(self.config.hnsw_m).map(|&(_, id)| id).collect();
            for &peer in &selected {
                self.link(node, peer, layer);
                self.link(peer, node, layer);
            }
            if let Some(&(_, best)) = found.first() {
                ep = best;
            }
        }

        if level > self.max_level {
            self.max_level = level;
            self.entry = node;
        }
    }

    fn link(&mut self, from: u32, to: u32, layer: usize) {
        if from == to {
            return;
        }
        let adj = &mut self.neighbors[from as usize][layer];
        if adj.contains(&to) {
            return;
        }
        adj.push(to);
        let cap = self.max_degree(layer);
        if self.neighbors[from as usize][layer].len() > cap {
            // Keep the `cap` closest neighbors.
            let base = self.vector(from).to_vec();
            let mut scored: Vec<(f32, u32)> = self.neighbors[from as usize][layer]
                .iter()
                .map(|&p| (l2_sq(&base, self.vector(p)), p))
                .collect();
            scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            scored.truncate(cap);
            self.neighbors[from as usize][layer] = scored.into_iter().map(|(_, p)| p).collect();
        }
    }

    fn greedy_closest(&self, query: &[f32], start: u32, layer: usize) -> u32 {
        let mut current = start;
        let mut best = l2_sq(query, self.vector(current));
        loop {
            let mut improved = false;
            for &peer in &self.neighbors[current as usize][layer] {
                let d = l2_sq(query, self.vector(peer));
                if d < best {
                    best = d;
                    current = peer;
                    improved = true;
                }
            }
            if !improved {
                return current;
            }
        }
    }

    /// Beam search within one layer; returns up to `ef` nodes sorted by
    /// ascending distance.
    fn search_layer(&self, query: &[f32], entries: &[u32], ef: usize, layer: usize) -> Vec<(f32, u32)> {
        let mut visited = vec![false; self.neighbors.len()];
        let mut candidates: BinaryHeap<Closest> = BinaryHeap::new();
        let mut results: BinaryHeap<HeapEntry> = BinaryHeap::new();

        for &ep in entries {
            if visited[ep as usize] {
                continue;
            }
            visited[ep as usize] = true;
            let d = l2_sq(query, self.vector(ep));
            candidates.push(Closest(d, ep));
            results.push(HeapEntry(d, ep as u64));
        }

        while let Some(Closest(d, node)) = candidates.pop() {
            let worst = results.peek().map(|e| e.0).unwrap_or(f32::INFINITY);
            if results.len() >= ef && d > worst {
                break;
            }
            for &peer in &self.neighbors[node as usize][layer] {
                if visited[peer as usize] {
                    continue;
                }
                visited[peer as usize] = true;
                let dp = l2_sq(query, self.vector(peer));
                let worst = results.peek().map(|e| e.0).unwrap_or(f32::INFINITY);
                if results.len() < ef || dp < worst {
                    candidates.push(Closest(dp, peer));
                    results.push(HeapEntry(dp, peer as u64));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }

        let mut out: Vec<(f32, u32)> =
            results.into_vec().into_iter().map(|HeapEntry(d, id)| (d, id as u32)).collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out
    }

    pub fn size(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// True if every node can reach the entry point along layer-0 edges.
    pub fn layer0_connected(&self) -> bool {
        let n = self.neighbors.len();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![self.entry];
        seen[self.entry as usize] = true;
        let mut reached = 1usize;
        while let Some(node) = stack.pop() {
            for &peer in &self.neighbors[node as usize][0] {
                if !seen[peer as usize] {
                    seen[peer as usize] = true;
                    reached += 1;
                    stack.push(peer);
                }
            }
        }
        reached == n
    }

    pub(crate) fn search(&self, query: &[f32], k: usize) -> (Vec<Neighbor>, SearchStats) {
        let mut ep = self.entry;
        for layer in (1..=self.max_level).rev() {
            ep = self.greedy_closest(query, ep, layer);
        }
        let ef = self.config.ef_search.max(k);
        let found = self.search_layer(query, &[ep], ef, 0);
        let mut top = TopK::new(k);
        let mut scanned = 0usize;
        for (d, node) in found {
            top.push(d, self.ids[node as usize]);
            scanned += 1;
        }
        (top.into_neighbors(), SearchStats { cells_visited: 1, candidates_scanned: scanned })
    }

    pub(crate) fn reconstruct(&self, id: u64) -> Result<Vec<f32>> {
        let row = match self.ids.get(id as usize) {
            Some(&v) if v == id => id as usize,
            _ => match self.ids.binary_search(&id) {
                Ok(r) => r,
                Err(_) => {
                    self.ids.iter().position(|&v| v == id).ok_or(Error::UnknownId(id))?
                }
            },
        };
        Ok(self.vectors[row * self.dim..(row + 1) * self.dim].to_vec())
    }

    pub(crate) fn memory_bytes(&self) -> usize {
        self.vectors.len() * 4
            + self.ids.len() * 8
            + self
                .neighbors
                .iter()
                .map(|layers| layers.iter().map(|adj| adj.len() * 4).sum::<usize>())
                .sum::<usize>()
    }
}
