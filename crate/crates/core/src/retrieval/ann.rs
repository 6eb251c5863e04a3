//! Hierarchical navigable small-world graph over an embedding cache.
//!
//! Similarity is the inner product. After construction the bottom layer is
//! repaired so every node is reachable from the entry point, which makes a
//! search with breadth >= corpus size exhaustive.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet, VecDeque};
use std::path::Path;
use std::sync::Arc;

use fnv::FnvBuildHasher;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::persist::{read_file, write_atomic, Reader};
use super::{hit_order, Hit, RankedHits, RetrievalError, VectorSearch};
use crate::embed::{dot, EmbeddingCache, EmbeddingVector};

pub const ANN_MAGIC: &[u8; 5] = b"SLHA1";
const MAX_LEVEL: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnParams {
    /// Neighbors per node on upper layers; the bottom layer keeps twice this.
    pub degree: usize,
    pub construction_breadth: usize,
    pub search_breadth: usize,
    pub seed: u64,
}

impl Default for AnnParams {
    fn default() -> Self {
        AnnParams {
            degree: 16,
            construction_breadth: 200,
            search_breadth: 64,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cand {
    score: f64,
    node: u32,
}

impl Eq for Cand {}

impl Ord for Cand {
    // Greater means closer: higher score, then lower node index.
    fn cmp(&self, other: &Self) -> Ordering {
        (self.score + 0.0)
            .total_cmp(&(other.score + 0.0))
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
pub struct AnnIndex {
    cache: Arc<EmbeddingCache>,
    params: AnnParams,
    /// `links[node][layer]` lists out-neighbors.
    links: Vec<Vec<Vec<u32>>>,
    entry: Option<u32>,
    max_level: usize,
}

impl AnnIndex {
    pub fn build(cache: impl Into<Arc<EmbeddingCache>>, params: AnnParams) -> Self {
        let cache = cache.into();
        let mut index = AnnIndex {
            cache,
            params: AnnParams {
                degree: params.degree.max(2),
                construction_breadth: params.construction_breadth.max(1),
                search_breadth: params.search_breadth.max(1),
                seed: params.seed,
            },
            links: Vec::new(),
            entry: None,
            max_level: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(index.params.seed);
        let level_mult = 1.0 / (index.params.degree as f64).ln();
        let n = index.cache.len();
        index.links.reserve(n);
        for node in 0..n {
            let u: f64 = 1.0 - rng.random::<f64>();
            let level = ((-u.ln() * level_mult).floor() as usize).min(MAX_LEVEL);
            index.insert(node as u32, level);
        }
        index.repair_reachability();
        index
    }

    pub fn params(&self) -> AnnParams {
        self.params
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }

    pub fn with_search_breadth(mut self, breadth: usize) -> Self {
        self.params.search_breadth = breadth.max(1);
        self
    }

    fn capacity(&self, layer: usize) -> usize {
        if layer == 0 {
            self.params.degree * 2
        } else {
            self.params.degree
        }
    }

    fn node_score(&self, a: u32, b: u32) -> f64 {
        dot(self.cache.row(a as usize), self.cache.row(b as usize))
    }

    fn query_score(&self, q: &[f32], node: u32) -> f64 {
        dot(q, self.cache.row(node as usize))
    }

    fn search_layer(&self, q: &[f32], entries: &[Cand], breadth: usize, layer: usize) -> Vec<Cand> {
        let mut visited: HashSet<u32, FnvBuildHasher> = HashSet::default();
        let mut candidates: BinaryHeap<Cand> = BinaryHeap::new();
        let mut results: BinaryHeap<Reverse<Cand>> = BinaryHeap::new();
        for &e in entries {
            if visited.insert(e.node) {
                candidates.push(e);
                results.push(Reverse(e));
                if results.len() > breadth {
                    results.pop();
                }
            }
        }
        while let Some(c) = candidates.pop() {
            if results.len() >= breadth {
                if let Some(Reverse(worst)) = results.peek() {
                    if c < *worst {
                        break;
                    }
                }
            }
            for &nb in &self.links[c.node as usize][layer] {
                if !visited.insert(nb) {
                    continue;
                }
                let cand = Cand {
                    score: self.query_score(q, nb),
                    node: nb,
                };
                let admit = results.len() < breadth
                    || results.peek().is_some_and(|Reverse(worst)| cand > *worst);
                if admit {
                    candidates.push(cand);
                    results.push(Reverse(cand));
                    if results.len() > breadth {
                        results.pop();
                    }
                }
            }
        }
        let mut out: Vec<Cand> = results.into_iter().map(|Reverse(c)| c).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Diversity heuristic: keep a candidate only if it is closer to the
    /// base than to every already selected neighbor, then backfill the
    /// remaining slots with the best pruned candidates.
    fn select_neighbors(&self, sorted: &[Cand], cap: usize) -> Vec<u32> {
        let mut selected: Vec<Cand> = Vec::with_capacity(cap);
        let mut pruned: Vec<Cand> = Vec::new();
        for &c in sorted {
            if selected.len() >= cap {
                break;
            }
            let diverse = selected
                .iter()
                .all(|s| c.score > self.node_score(c.node, s.node));
            if diverse {
                selected.push(c);
            } else {
                pruned.push(c);
            }
        }
        for c in pruned {
            if selected.len() >= cap {
                break;
            }
            selected.push(c);
        }
        selected.into_iter().map(|c| c.node).collect()
    }

    fn insert(&mut self, node: u32, level: usize) {
        self.links.push(vec![Vec::new(); level + 1]);
        let Some(entry) = self.entry else {
            self.entry = Some(node);
            self.max_level = level;
            return;
        };
        let q: Vec<f32> = self.cache.row(node as usize).to_vec();
        let mut eps = vec![Cand {
            score: self.query_score(&q, entry),
            node: entry,
        }];
        for layer in (level + 1..=self.max_level).rev() {
            eps = self.search_layer(&q, &eps, 1, layer);
        }
        for layer in (0..=level.min(self.max_level)).rev() {
            let found = self.search_layer(&q, &eps, self.params.construction_breadth, layer);
            let cap = self.capacity(layer);
            let neighbors = self.select_neighbors(&found, cap);
            for &nb in &neighbors {
                let list = &mut self.links[nb as usize][layer];
                list.push(node);
                if list.len() > cap {
                    let mut scored: Vec<Cand> = self.links[nb as usize][layer]
                        .iter()
                        .map(|&x| Cand {
                            score: self.node_score(nb, x),
                            node: x,
                        })
                        .collect();
                    scored.sort_by(|a, b| b.cmp(a));
                    self.links[nb as usize][layer] = self.select_neighbors(&scored, cap);
                }
            }
            self.links[node as usize][layer] = neighbors;
            eps = found;
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry = Some(node);
        }
    }

    fn mark_from(&self, start: u32, seen: &mut [bool]) {
        let mut queue = VecDeque::from([start]);
        seen[start as usize] = true;
        while let Some(n) = queue.pop_front() {
            for &nb in &self.links[n as usize][0] {
                if !seen[nb as usize] {
                    seen[nb as usize] = true;
                    queue.push_back(nb);
                }
            }
        }
    }

    fn repair_reachability(&mut self) {
        let Some(entry) = self.entry else { return };
        let n = self.links.len();
        let mut seen = vec![false; n];
        self.mark_from(entry, &mut seen);
        for u in 0..n as u32 {
            if seen[u as usize] {
                continue;
            }
            let q: Vec<f32> = self.cache.row(u as usize).to_vec();
            let start = Cand {
                score: self.query_score(&q, entry),
                node: entry,
            };
            let best = self
                .search_layer(&q, &[start], self.params.construction_breadth, 0)
                .into_iter()
                .find(|c| seen[c.node as usize])
                .map_or(entry, |c| c.node);
            self.links[best as usize][0].push(u);
            self.links[u as usize][0].push(best);
            self.mark_from(u, &mut seen);
        }
    }

    pub fn search(&self, v: &EmbeddingVector, k: usize) -> Result<RankedHits, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        let Some(entry) = self.entry else {
            return Err(RetrievalError::EmptyIndex);
        };
        if v.dim() != self.cache.dim() {
            return Err(RetrievalError::DimMismatch {
                expected: self.cache.dim(),
                found: v.dim(),
            });
        }
        let q = v.values();
        let mut eps = vec![Cand {
            score: self.query_score(q, entry),
            node: entry,
        }];
        for layer in (1..=self.max_level).rev() {
            eps = self.search_layer(q, &eps, 1, layer);
        }
        let mut found = self.search_layer(q, &eps, self.params.search_breadth.max(k), 0);
        found.sort_by(|a, b| {
            hit_order(
                a.score,
                self.cache.id(a.node as usize),
                b.score,
                self.cache.id(b.node as usize),
            )
        });
        found.truncate(k);
        Ok(RankedHits::from_unsorted(
            found
                .into_iter()
                .map(|c| Hit {
                    doc_id: self.cache.id(c.node as usize).to_string(),
                    score: c.score,
                })
                .collect(),
        ))
    }

    /// Layout: magic `SLHA1`, `u32` degree, `u32` construction breadth,
    /// `u32` search breadth, `u64` seed, `u32` dim, `u64` node count,
    /// `u64` entry (`u64::MAX` when empty), `u32` max level, then per node a
    /// `u32` level and per layer a `u32` count followed by `u32` neighbors.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        write_atomic(path.as_ref(), |w| {
            w.bytes(ANN_MAGIC)?;
            w.u32(self.params.degree as u32)?;
            w.u32(self.params.construction_breadth as u32)?;
            w.u32(self.params.search_breadth as u32)?;
            w.u64(self.params.seed)?;
            w.u32(self.cache.dim() as u32)?;
            w.u64(self.links.len() as u64)?;
            w.u64(self.entry.map_or(u64::MAX, u64::from))?;
            w.u32(self.max_level as u32)?;
            for layers in &self.links {
                w.u32((layers.len() - 1) as u32)?;
                for list in layers {
                    w.u32(list.len() as u32)?;
                    for &nb in list {
                        w.u32(nb)?;
                    }
                }
            }
            Ok(())
        })
    }

    pub fn load(path: impl AsRef<Path>, cache: impl Into<Arc<EmbeddingCache>>) -> Result<Self, RetrievalError> {
        let cache = cache.into();
        let bytes = read_file(path.as_ref())?;
        let mut r = Reader::new(&bytes);
        r.expect_magic(ANN_MAGIC)?;
        let params = AnnParams {
            degree: r.u32()? as usize,
            construction_breadth: r.u32()? as usize,
            search_breadth: r.u32()? as usize,
            seed: r.u64()?,
        };
        let dim = r.u32()? as usize;
        let n = r.u64()? as usize;
        if dim != cache.dim() || n != cache.len() {
            return Err(RetrievalError::Format(format!(
                "graph is {n} x {dim}, cache is {} x {}",
                cache.len(),
                cache.dim()
            )));
        }
        let entry = match r.u64()? {
            u64::MAX => None,
            e if (e as usize) < n => Some(e as u32),
            e => return Err(RetrievalError::Format(format!("entry {e} out of range"))),
        };
        let max_level = r.u32()? as usize;
        let mut links = Vec::with_capacity(n);
        for _ in 0..n {
            let level = r.u32()? as usize;
            if level > max_level {
                return Err(RetrievalError::Format("node level exceeds max level".into()));
            }
            let mut layers = Vec::with_capacity(level + 1);
            for _ in 0..=level {
                let count = r.u32()? as usize;
                let mut list = Vec::with_capacity(count.min(1024));
                for _ in 0..count {
                    let nb = r.u32()?;
                    if nb as usize >= n {
                        return Err(RetrievalError::Format(format!("neighbor {nb} out of range")));
                    }
                    list.push(nb);
                }
                layers.push(list);
            }
            links.push(layers);
        }
        r.finish()?;
        Ok(AnnIndex {
            cache,
            params,
            links,
            entry,
            max_level,
        })
    }
}

impl VectorSearch for AnnIndex {
    fn dim(&self) -> usize {
        self.cache.dim()
    }

    fn len(&self) -> usize {
        self.cache.len()
    }

    fn search(&self, query: &EmbeddingVector, k: usize) -> Result<RankedHits, RetrievalError> {
        AnnIndex::search(self, query, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::normalize;
    use crate::retrieval::DenseIndex;

    pub(crate) fn random_cache(n: usize, dim: usize, seed: u64) -> EmbeddingCache {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Vec::with_capacity(n * dim);
        for _ in 0..n {
            let raw: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            m.extend(normalize(&EmbeddingVector::new(raw).unwrap()).unwrap().into_values());
        }
        EmbeddingCache::new((0..n).map(|i| format!("v{i:05}")).collect(), m, dim).unwrap()
    }

    #[test]
    fn duplicate_of_stored_vector_is_found() {
        let cache = Arc::new(random_cache(300, 32, 1));
        let ann = AnnIndex::build(cache.clone(), AnnParams::default());
        for row in [0, 57, 299] {
            let hits = ann.search(&cache.vector(row), 1).unwrap();
            assert_eq!(hits.hits()[0].doc_id, cache.id(row));
        }
    }

    #[test]
    fn empty_index_errors() {
        let cache = EmbeddingCache::new(vec![], vec![], 4).unwrap();
        let ann = AnnIndex::build(cache, AnnParams::default());
        let q = EmbeddingVector::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(ann.search(&q, 1), Err(RetrievalError::EmptyIndex)));
    }

    #[test]
    fn full_breadth_is_exact() {
        let cache = Arc::new(random_cache(400, 16, 2));
        let ann = AnnIndex::build(
            cache.clone(),
            AnnParams {
                degree: 4,
                construction_breadth: 8,
                ..Default::default()
            },
        )
        .with_search_breadth(400);
        let exact = DenseIndex::new(cache.clone());
        let queries = random_cache(20, 16, 3);
        for r in 0..queries.len() {
            let q = queries.vector(r);
            assert_eq!(ann.search(&q, 25).unwrap(), exact.search(&q, 25).unwrap());
        }
    }

    #[test]
    fn save_load_round_trip() {
        let cache = Arc::new(random_cache(120, 8, 4));
        let ann = AnnIndex::build(cache.clone(), AnnParams::default());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.slha");
        ann.save(&path).unwrap();
        assert_eq!(&std::fs::read(&path).unwrap()[..5], b"SLHA1");
        let back = AnnIndex::load(&path, cache.clone()).unwrap();
        assert_eq!(back.links, ann.links);
        assert_eq!(back.params(), ann.params());
        let q = cache.vector(3);
        assert_eq!(back.search(&q, 10).unwrap(), ann.search(&q, 10).unwrap());

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(AnnIndex::load(&path, cache.clone()), Err(RetrievalError::Format(_))));
        let other = Arc::new(random_cache(121, 8, 4));
        std::fs::write(&path, &bytes).unwrap();
        assert!(AnnIndex::load(&path, other).is_err());
    }
}
