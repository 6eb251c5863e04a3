//! Exact dense search, graph ANN search, and BM25.
//!
//! All searches return [`RankedHits`]: descending score, ties broken by
//! ascending doc id.

mod ann;
mod bm25;
mod dense;
mod persist;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

pub use ann::{AnnIndex, AnnParams, ANN_MAGIC};
pub use bm25::{tokenize, Bm25Index, Bm25Params, Tokenizer, BM25_MAGIC};
pub use dense::DenseIndex;

use crate::embed::{EmbeddingCache, EmbeddingVector};

/// Corpora up to this size are searched exhaustively by [`mining_index`].
pub const EXACT_SEARCH_MAX: usize = 10_000;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("query dim {found} does not match index dim {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("unknown document `{0}`")]
    UnknownDocument(String),
    #[error("index format: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc_id: String,
    pub score: f64,
}

/// Ordering used by every ranking: higher score first, then smaller id.
/// Signed zeros compare equal.
pub fn hit_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    (b_score + 0.0).total_cmp(&(a_score + 0.0)).then_with(|| a_id.cmp(b_id))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RankedHits {
    hits: Vec<Hit>,
}

impl RankedHits {
    /// Sorts and deduplicates (keeping the best score per id).
    pub fn from_unsorted(mut hits: Vec<Hit>) -> Self {
        hits.sort_by(|a, b| hit_order(a.score, &a.doc_id, b.score, &b.doc_id));
        let mut seen = std::collections::HashSet::new();
        hits.retain(|h| seen.insert(h.doc_id.clone()));
        RankedHits { hits }
    }

    pub fn hits(&self) -> &[Hit] {
        &self.hits
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.hits.iter().map(|h| h.doc_id.as_str())
    }

    pub fn truncate(&mut self, k: usize) {
        self.hits.truncate(k);
    }

    /// 1-based position of `doc_id`, if present.
    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.hits.iter().position(|h| h.doc_id == doc_id).map(|p| p + 1)
    }

    pub fn into_hits(self) -> Vec<Hit> {
        self.hits
    }
}

/// A vector index searchable by inner product.
pub trait VectorSearch: Send + Sync {
    fn dim(&self) -> usize;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn search(&self, query: &EmbeddingVector, k: usize) -> Result<RankedHits, RetrievalError>;
}

/// Exact search for small corpora, a graph index above [`EXACT_SEARCH_MAX`].
pub fn mining_index(cache: std::sync::Arc<EmbeddingCache>, params: AnnParams) -> Box<dyn VectorSearch> {
    if cache.len() <= EXACT_SEARCH_MAX {
        Box::new(DenseIndex::new(cache))
    } else {
        Box::new(AnnIndex::build(cache, params))
    }
}

pub fn dense_search(index: &DenseIndex, v: &EmbeddingVector, k: usize) -> Result<RankedHits, RetrievalError> {
    index.search(v, k)
}

pub fn rank_of(index: &DenseIndex, v: &EmbeddingVector, target: &str) -> Result<usize, RetrievalError> {
    index.rank_of(v, target)
}

pub fn ann_search(index: &AnnIndex, v: &EmbeddingVector, k: usize) -> Result<RankedHits, RetrievalError> {
    index.search(v, k)
}

pub fn bm25_search(index: &Bm25Index, query: &str, k: usize) -> Result<RankedHits, RetrievalError> {
    index.search(query, k)
}
