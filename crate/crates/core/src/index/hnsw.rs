//! Hierarchical navigable small-world graph under inner-product similarity.
//!
//! Construction follows the usual layered insertion: a node's top layer is
//! drawn from a geometric distribution (`floor(-ln U / ln M)`), the entry
//! point is descended greedily to that layer, and on each layer below a
//! beam search of width `ef_construction` feeds the neighbor-selection
//! heuristic. Levels come from a seeded generator, so a build is a pure
//! function of (entries, params).

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{rank_order, HnswParams, IndexEntry, IndexError, SearchHit};
use crate::linalg;

const MAX_LEVEL: usize = 16;

#[derive(Clone, Copy, Debug)]
struct Scored {
    score: f64,
    node: u32,
}

impl PartialEq for Scored {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scored {}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scored {
    // Higher score first; among equal scores the lower node id is "better".
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.node.cmp(&self.node))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HnswIndex {
    pub(super) params: HnswParams,
    pub(super) dim: usize,
    pub(super) ids: Vec<String>,
    pub(super) vectors: Vec<f64>,
    /// `links[node][layer]`, one list per layer the node lives on.
    pub(super) links: Vec<Vec<Vec<u32>>>,
    pub(super) entry_point: Option<u32>,
}

impl HnswIndex {
    pub fn build(entries: &[IndexEntry], params: HnswParams) -> Result<Self, IndexError> {
        params.validate()?;
        let dim = entries.first().map_or(0, |e| e.vector.len());
        let mut seen = HashSet::with_capacity(entries.len());
        for e in entries {
            if e.vector.len() != dim {
                return Err(IndexError::DimMismatch {
                    expected: dim,
                    found: e.vector.len(),
                });
            }
            if !seen.insert(e.table_id.as_str()) {
                return Err(IndexError::DuplicateId(e.table_id.clone()));
            }
        }

        let mut index = HnswIndex {
            params,
            dim,
            ids: Vec::with_capacity(entries.len()),
            vectors: Vec::with_capacity(entries.len() * dim),
            links: Vec::with_capacity(entries.len()),
            entry_point: None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let level_mult = 1.0 / (params.m as f64).ln();
        for e in entries {
            // 1 - U lies in (0, 1], so the log is finite.
            let u: f64 = rng.random();
            let level = ((-(1.0 - u).ln() * level_mult).floor() as usize).min(MAX_LEVEL);
            index.insert(e, level);
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    pub fn set_ef_search(&mut self, ef: usize) {
        self.params.ef_search = ef.max(1);
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, node: usize) -> &[f64] {
        &self.vectors[node * self.dim..(node + 1) * self.dim]
    }

    /// Top layer of `node`.
    pub fn level(&self, node: usize) -> usize {
        self.links[node].len() - 1
    }

    pub fn max_level(&self) -> Option<usize> {
        self.entry_point.map(|ep| self.level(ep as usize))
    }

    pub fn neighbors(&self, node: usize, layer: usize) -> &[u32] {
        &self.links[node][layer]
    }

    /// Entries in insertion order.
    pub fn entries(&self) -> Vec<IndexEntry> {
        (0..self.len())
            .map(|i| IndexEntry::new(self.ids[i].clone(), self.vector(i).to_vec()))
            .collect()
    }

    /// Up to `n` hits, score descending then id ascending. The beam width is
    /// `max(ef_search, n)`.
    pub fn search(&self, query: &[f64], n: usize) -> Result<Vec<SearchHit>, IndexError> {
        let Some(ep) = self.entry_point else {
            return Ok(Vec::new());
        };
        if query.len() != self.dim {
            return Err(IndexError::DimMismatch {
                expected: self.dim,
                found: query.len(),
            });
        }
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut cur = Scored {
            score: self.score(query, ep),
            node: ep,
        };
        for layer in (1..=self.level(ep as usize)).rev() {
            cur = self.greedy(query, cur, layer);
        }
        let ef = self.params.ef_search.max(n);
        let found = self.search_layer(query, &[cur], ef, 0);
        let mut hits: Vec<SearchHit> = found
            .into_iter()
            .map(|s| SearchHit {
                table_id: self.ids[s.node as usize].clone(),
                score: s.score,
            })
            .collect();
        hits.sort_by(rank_order);
        hits.truncate(n);
        Ok(hits)
    }

    fn score(&self, query: &[f64], node: u32) -> f64 {
        linalg::dot(query, self.vector(node as usize))
    }

    fn sim(&self, a: u32, b: u32) -> f64 {
        linalg::dot(self.vector(a as usize), self.vector(b as usize))
    }

    fn greedy(&self, query: &[f64], mut cur: Scored, layer: usize) -> Scored {
        loop {
            let mut improved = false;
            for &nb in &self.links[cur.node as usize][layer] {
                let cand = Scored {
                    score: self.score(query, nb),
                    node: nb,
                };
                if cand > cur {
                    cur = cand;
                    improved = true;
                }
            }
            if !improved {
                return cur;
            }
        }
    }

    /// Beam search on one layer; returns up to `ef` nodes, best first.
    fn search_layer(&self, query: &[f64], entry: &[Scored], ef: usize, layer: usize) -> Vec<Scored> {
        let mut visited = vec![false; self.len()];
        let mut candidates: BinaryHeap<Scored> = BinaryHeap::new();
        let mut results: BinaryHeap<Reverse<Scored>> = BinaryHeap::new();
        for &e in entry {
            if !visited[e.node as usize] {
                visited[e.node as usize] = true;
                candidates.push(e);
                results.push(Reverse(e));
            }
        }
        while results.len() > ef {
            results.pop();
        }
        while let Some(c) = candidates.pop() {
            let worst = results.peek().expect("non-empty").0;
            if results.len() >= ef && c < worst {
                break;
            }
            for &nb in &self.links[c.node as usize][layer] {
                if std::mem::replace(&mut visited[nb as usize], true) {
                    continue;
                }
                let s = Scored {
                    score: self.score(query, nb),
                    node: nb,
                };
                if results.len() < ef || s > results.peek().expect("non-empty").0 {
                    candidates.push(s);
                    results.push(Reverse(s));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        let mut out: Vec<Scored> = results.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    fn insert(&mut self, entry: &IndexEntry, level: usize) {
        let node = self.ids.len() as u32;
        self.ids.push(entry.table_id.clone());
        self.vectors.extend_from_slice(&entry.vector);
        self.links.push(vec![Vec::new(); level + 1]);

        let Some(ep) = self.entry_point else {
            self.entry_point = Some(node);
            return;
        };
        let query = entry.vector.as_slice();
        let top = self.level(ep as usize);
        let mut cur = Scored {
            score: self.score(query, ep),
            node: ep,
        };
        for layer in (level + 1..=top).rev() {
            cur = self.greedy(query, cur, layer);
        }
        let mut eps = vec![cur];
        for layer in (0..=level.min(top)).rev() {
            let found = self.search_layer(query, &eps, self.params.ef_construction, layer);
            let chosen = self.select_neighbors(&found, self.params.m);
            self.links[node as usize][layer] = chosen.iter().map(|s| s.node).collect();
            for s in &chosen {
                self.connect(s.node, node, layer);
            }
            eps = found;
        }
        if level > top {
            self.entry_point = Some(node);
        }
    }

    /// Adds `to` to `from`'s list on `layer`, pruning `from` back to the
    /// layer's bound if it overflows.
    fn connect(&mut self, from: u32, to: u32, layer: usize) {
        let bound = self.params.max_links(layer);
        let list = &mut self.links[from as usize][layer];
        list.push(to);
        if list.len() <= bound {
            return;
        }
        let mut cands: Vec<Scored> = self.links[from as usize][layer]
            .iter()
            .map(|&nb| Scored {
                score: self.sim(from, nb),
                node: nb,
            })
            .collect();
        cands.sort_by(|a, b| b.cmp(a));
        let kept = self.select_neighbors(&cands, bound);
        self.links[from as usize][layer] = kept.iter().map(|s| s.node).collect();
    }

    /// Diversity heuristic: walk candidates best-first and keep one only if
    /// it is closer to the base than to every neighbor already kept. Slots
    /// left over are refilled with the best discarded candidates.
    /// `cands` must be sorted best-first.
    fn select_neighbors(&self, cands: &[Scored], limit: usize) -> Vec<Scored> {
        let mut kept: Vec<Scored> = Vec::with_capacity(limit);
        let mut pruned: Vec<Scored> = Vec::new();
        for &c in cands {
            if kept.len() >= limit {
                break;
            }
            if kept.iter().all(|k| c.score > self.sim(c.node, k.node)) {
                kept.push(c);
            } else {
                pruned.push(c);
            }
        }
        for p in pruned {
            if kept.len() >= limit {
                break;
            }
            kept.push(p);
        }
        kept
    }
}

#[cfg(test)]
mod tests {
    use super::super::brute_force_search;
    use super::*;

    pub(crate) fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
        // Normalized Gaussian via Box-Muller.
        let mut v: Vec<f64> = (0..dim)
            .map(|_| {
                let u1: f64 = 1.0 - rng.random::<f64>();
                let u2: f64 = rng.random();
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            })
            .collect();
        linalg::normalize(&mut v);
        v
    }

    fn corpus(n: usize, dim: usize, seed: u64) -> Vec<IndexEntry> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| IndexEntry::new(format!("t{i:05}"), random_unit(&mut rng, dim)))
            .collect()
    }

    #[test]
    fn single_entry() {
        let idx = HnswIndex::build(&corpus(1, 8, 0), HnswParams::default()).unwrap();
        assert_eq!(idx.len(), 1);
        let hits = idx.search(&[0.0; 8], 5).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].table_id, "t00000");
    }

    #[test]
    fn empty_index_returns_nothing() {
        let idx = HnswIndex::build(&[], HnswParams::default()).unwrap();
        assert!(idx.search(&[1.0, 2.0], 3).unwrap().is_empty());
    }

    #[test]
    fn n_above_size_returns_all() {
        let entries = corpus(20, 8, 1);
        let idx = HnswIndex::build(&entries, HnswParams::default()).unwrap();
        assert_eq!(idx.search(&entries[3].vector, 50).unwrap().len(), 20);
    }

    #[test]
    fn build_errors() {
        let mut entries = corpus(3, 8, 2);
        entries[2].vector.pop();
        assert!(matches!(
            HnswIndex::build(&entries, HnswParams::default()),
            Err(IndexError::DimMismatch { expected: 8, found: 7 })
        ));
        let mut entries = corpus(3, 8, 2);
        entries[2].table_id = entries[0].table_id.clone();
        assert!(matches!(
            HnswIndex::build(&entries, HnswParams::default()),
            Err(IndexError::DuplicateId(_))
        ));
        let idx = HnswIndex::build(&corpus(3, 8, 2), HnswParams::default()).unwrap();
        assert!(matches!(idx.search(&[1.0], 1), Err(IndexError::DimMismatch { .. })));
    }

    #[test]
    fn exhaustive_equivalence_on_small_indexes() {
        for (n, seed) in [(2, 0), (5, 1), (17, 2), (32, 3), (32, 4)] {
            let entries = corpus(n, 12, seed);
            let params = HnswParams {
                ef_search: n,
                seed,
                ..Default::default()
            };
            let idx = HnswIndex::build(&entries, params).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(99 + seed);
            for _ in 0..20 {
                let q = random_unit(&mut rng, 12);
                for k in [1, 5, n] {
                    assert_eq!(idx.search(&q, k).unwrap(), brute_force_search(&entries, &q, k));
                }
            }
        }
    }

    #[test]
    fn graph_integrity() {
        let entries = corpus(2000, 16, 5);
        let params = HnswParams {
            m: 8,
            ..Default::default()
        };
        let idx = HnswIndex::build(&entries, params).unwrap();
        let top = idx.max_level().unwrap();
        assert!(top >= 1, "2000 nodes at m=8 should reach layer 1");
        for node in 0..idx.len() {
            for layer in 0..=idx.level(node) {
                let nbs = idx.neighbors(node, layer);
                assert!(nbs.len() <= params.max_links(layer));
                for &nb in nbs {
                    assert_ne!(nb as usize, node);
                    // A neighbor on layer l lives on every layer <= l.
                    assert!(idx.level(nb as usize) >= layer);
                }
                let unique: HashSet<_> = nbs.iter().collect();
                assert_eq!(unique.len(), nbs.len());
            }
        }
        assert_eq!(idx.level(idx.entry_point.unwrap() as usize), top);
    }

    #[test]
    fn same_seed_same_results() {
        let entries = corpus(500, 16, 6);
        let a = HnswIndex::build(&entries, HnswParams::default()).unwrap();
        let b = HnswIndex::build(&entries, HnswParams::default()).unwrap();
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let q = random_unit(&mut rng, 16);
            assert_eq!(a.search(&q, 10).unwrap(), b.search(&q, 10).unwrap());
        }
    }

    #[test]
    fn scores_non_increasing() {
        let entries = corpus(300, 16, 8);
        let idx = HnswIndex::build(&entries, HnswParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let hits = idx.search(&random_unit(&mut rng, 16), 25).unwrap();
            assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
        }
    }
    /// Embeddings cluster by topic; recall holds at full width there.
    #[test]
    fn clustered_high_dim_recall() {
        let dim = 256;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let centers: Vec<Vec<f64>> = (0..40).map(|_| random_unit(&mut rng, dim)).collect();
        let noisy = |rng: &mut ChaCha8Rng, c: &[f64]| {
            let mut v: Vec<f64> = c.iter().zip(random_unit(rng, dim)).map(|(a, b)| a + 0.5 * b).collect();
            linalg::normalize(&mut v);
            v
        };
        let entries: Vec<IndexEntry> = (0..3000)
            .map(|i| IndexEntry::new(format!("t{i:05}"), noisy(&mut rng, &centers[i % centers.len()])))
            .collect();
        let idx = HnswIndex::build(&entries, HnswParams::default()).unwrap();
        let (mut hit, mut total) = (0, 0);
        for q in 0..100 {
            let q = noisy(&mut rng, &centers[q % centers.len()]);
            let exact: Vec<String> = brute_force_search(&entries, &q, 10).into_iter().map(|h| h.table_id).collect();
            let got = idx.search(&q, 10).unwrap();
            hit += got.iter().filter(|h| exact.contains(&h.table_id)).count();
            total += exact.len();
        }
        let recall = hit as f64 / total as f64;
        assert!(recall >= 0.95, "recall {recall}");
    }
}
