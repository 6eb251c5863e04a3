use std::cmp::Ordering;
use std::sync::Arc;

use rayon::prelude::*;

use super::{hit_order, Hit, RankedHits, RetrievalError, VectorSearch};
use crate::embed::{dot, EmbeddingCache, EmbeddingVector};

const PARALLEL_SCAN_MIN: usize = 20_000;

/// Exhaustive inner-product search over an embedding cache.
#[derive(Debug, Clone)]
pub struct DenseIndex {
    cache: Arc<EmbeddingCache>,
}

impl DenseIndex {
    pub fn new(cache: impl Into<Arc<EmbeddingCache>>) -> Self {
        DenseIndex { cache: cache.into() }
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }

    pub fn shared_cache(&self) -> Arc<EmbeddingCache> {
        Arc::clone(&self.cache)
    }

    fn check(&self, v: &EmbeddingVector) -> Result<(), RetrievalError> {
        if self.cache.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        if v.dim() != self.cache.dim() {
            return Err(RetrievalError::DimMismatch {
                expected: self.cache.dim(),
                found: v.dim(),
            });
        }
        Ok(())
    }

    /// Inner product of `v` with every row, in row order.
    pub fn scores(&self, v: &EmbeddingVector) -> Result<Vec<f64>, RetrievalError> {
        self.check(v)?;
        let q = v.values();
        let n = self.cache.len();
        let scores = if n >= PARALLEL_SCAN_MIN {
            (0..n).into_par_iter().map(|r| dot(q, self.cache.row(r))).collect()
        } else {
            (0..n).map(|r| dot(q, self.cache.row(r))).collect()
        };
        Ok(scores)
    }

    pub fn search(&self, v: &EmbeddingVector, k: usize) -> Result<RankedHits, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        let scores = self.scores(v)?;
        let cmp = |a: &usize, b: &usize| -> Ordering {
            hit_order(scores[*a], self.cache.id(*a), scores[*b], self.cache.id(*b))
        };
        let mut rows: Vec<usize> = (0..scores.len()).collect();
        if k < rows.len() {
            rows.select_nth_unstable_by(k - 1, cmp);
            rows.truncate(k);
        }
        rows.sort_unstable_by(cmp);
        Ok(RankedHits::from_unsorted(
            rows.into_iter()
                .map(|r| Hit {
                    doc_id: self.cache.id(r).to_string(),
                    score: scores[r],
                })
                .collect(),
        ))
    }

    /// 1-based rank of `target` in the full ranking for `v`.
    pub fn rank_of(&self, v: &EmbeddingVector, target: &str) -> Result<usize, RetrievalError> {
        let t = self
            .cache
            .position(target)
            .ok_or_else(|| RetrievalError::UnknownDocument(target.to_string()))?;
        let scores = self.scores(v)?;
        let (ts, tid) = (scores[t], self.cache.id(t));
        Ok(1 + (0..scores.len())
            .filter(|&r| hit_order(scores[r], self.cache.id(r), ts, tid) == Ordering::Less)
            .count())
    }
}

impl VectorSearch for DenseIndex {
    fn dim(&self) -> usize {
        self.cache.dim()
    }

    fn len(&self) -> usize {
        self.cache.len()
    }

    fn search(&self, query: &EmbeddingVector, k: usize) -> Result<RankedHits, RetrievalError> {
        DenseIndex::search(self, query, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn index(rows: &[(&str, Vec<f32>)]) -> DenseIndex {
        let dim = rows[0].1.len();
        let ids = rows.iter().map(|(i, _)| i.to_string()).collect();
        let m = rows.iter().flat_map(|(_, v)| v.clone()).collect();
        DenseIndex::new(EmbeddingCache::new(ids, m, dim).unwrap())
    }

    fn v(x: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn stored_vector_ranks_first() {
        let idx = index(&[("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0]), ("c", vec![0.6, 0.8])]);
        let hits = idx.search(&v(&[0.6, 0.8]), 1).unwrap();
        assert_eq!(hits.hits()[0].doc_id, "c");
        assert!((hits.hits()[0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn orthogonal_query_orders_by_id() {
        let idx = index(&[("c", vec![1.0, 0.0]), ("a", vec![1.0, 0.0]), ("b", vec![1.0, 0.0])]);
        let hits = idx.search(&v(&[0.0, 1.0]), 3).unwrap();
        assert_eq!(hits.ids().collect::<Vec<_>>(), vec!["a", "b", "c"]);
        assert!(hits.hits().iter().all(|h| h.score == 0.0));
    }

    #[test]
    fn rank_of_examples() {
        let idx = index(&[("x", vec![0.9]), ("y", vec![0.5]), ("z", vec![0.1])]);
        assert_eq!(idx.rank_of(&v(&[1.0]), "x").unwrap(), 1);
        assert_eq!(idx.rank_of(&v(&[1.0]), "y").unwrap(), 2);
        // two docs tied above the target
        let tied = index(&[("p", vec![0.9]), ("q", vec![0.9]), ("t", vec![0.5])]);
        assert_eq!(tied.rank_of(&v(&[1.0]), "t").unwrap(), 3);
        // tie with the target itself: smaller id ranks first
        let same = index(&[("b", vec![0.5]), ("a", vec![0.5])]);
        assert_eq!(same.rank_of(&v(&[1.0]), "b").unwrap(), 2);
        assert!(matches!(idx.rank_of(&v(&[1.0]), "nope"), Err(RetrievalError::UnknownDocument(_))));
    }

    #[test]
    fn errors() {
        let idx = index(&[("a", vec![1.0, 0.0])]);
        assert!(matches!(idx.search(&v(&[1.0]), 1), Err(RetrievalError::DimMismatch { .. })));
        assert!(matches!(idx.search(&v(&[1.0, 0.0]), 0), Err(RetrievalError::ZeroK)));
        let empty = DenseIndex::new(EmbeddingCache::new(vec![], vec![], 2).unwrap());
        assert!(matches!(empty.search(&v(&[1.0, 0.0]), 1), Err(RetrievalError::EmptyIndex)));
    }

    fn brute_force(ids: &[String], rows: &[Vec<f32>], q: &[f32]) -> Vec<(String, f64)> {
        let mut all: Vec<(String, f64)> = ids
            .iter()
            .zip(rows)
            .map(|(id, r)| (id.clone(), r.iter().zip(q).map(|(a, b)| *a as f64 * *b as f64).sum()))
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        all
    }

    proptest! {
        #[test]
        fn full_ranking_matches_scan(
            (n, dim, data, q) in (1usize..200, 1usize..8).prop_flat_map(|(n, dim)| (
                Just(n), Just(dim),
                proptest::collection::vec(proptest::collection::vec(-2i8..=2, dim), n),
                proptest::collection::vec(-2i8..=2, dim),
            )),
            k in 1usize..250,
            scale in 0.01f32..100.0,
        ) {
            let ids: Vec<String> = (0..n).map(|i| format!("d{:03}", (i * 37) % 1000)).collect();
            let ids: Vec<String> = {
                let mut seen = std::collections::HashSet::new();
                ids.into_iter().enumerate().map(|(i, s)| if seen.insert(s.clone()) { s } else { format!("u{i}") }).collect()
            };
            let rows: Vec<Vec<f32>> = data.iter().map(|r| r.iter().map(|&x| x as f32).collect()).collect();
            let qv: Vec<f32> = q.iter().map(|&x| x as f32).collect();
            let idx = DenseIndex::new(EmbeddingCache::new(ids.clone(), rows.concat(), dim).unwrap());
            let query = EmbeddingVector::new(qv.clone()).unwrap();
            let expected = brute_force(&ids, &rows, &qv);
            let full = idx.search(&query, n).unwrap();
            let got: Vec<(String, f64)> = full.hits().iter().map(|h| (h.doc_id.clone(), h.score)).collect();
            prop_assert_eq!(&got, &expected);

            let top = idx.search(&query, k).unwrap();
            prop_assert_eq!(top.len(), k.min(n));
            prop_assert!(top.hits().iter().zip(full.hits()).all(|(a, b)| a == b));

            for (pos, h) in full.hits().iter().enumerate() {
                prop_assert_eq!(idx.rank_of(&query, &h.doc_id).unwrap(), pos + 1);
            }

            // small-integer entries times a power of two scale exactly
            let pow2 = 2f32.powi(scale.log2().round() as i32);
            let scaled = idx.search(&query.scaled(pow2), n).unwrap();
            prop_assert_eq!(scaled.ids().collect::<Vec<_>>(), full.ids().collect::<Vec<_>>());
        }
    }
}
