//! Encoder clients and embedding vectors.
//!
//! Every vector leaving [`EmbedderClient::embed_texts`] is unit-normalized,
//! so inner product and cosine similarity coincide everywhere downstream.

mod cache;
mod mock;
mod remote;

use std::sync::Arc;

pub use cache::{cache_embeddings, load_cache, load_cache_for, CacheStatus, EmbeddingCache, CACHE_MAGIC};
pub use mock::HashingEmbedder;
pub use remote::{embeddings_request_body, parse_embeddings_response, EmbeddingsBackend};

/// Tolerance on the L2 norm of a unit vector.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("vector contains a non-finite value")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("no texts to embed")]
    EmptyBatch,
    #[error("text {0} is empty")]
    EmptyText(usize),
    #[error("transport: {0}")]
    Transport(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("cache format: {0}")]
    Format(String),
    #[error("cache validation: {0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, EmbedError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_NORM_TOLERANCE
    }

    pub fn dot(&self, other: &EmbeddingVector) -> Result<f64, EmbedError> {
        if self.dim() != other.dim() {
            return Err(EmbedError::DimMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(dot(&self.values, &other.values))
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> Result<f64, EmbedError> {
        let d = self.dot(other)?;
        let n = self.norm() * other.norm();
        if n == 0.0 {
            return Err(EmbedError::ZeroVector);
        }
        Ok(d / n)
    }

    pub fn scaled(&self, factor: f32) -> EmbeddingVector {
        EmbeddingVector {
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn normalized(&self) -> Result<EmbeddingVector, EmbedError> {
        normalize(self)
    }
}

/// Inner product accumulated in f64.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

pub fn normalize(v: &EmbeddingVector) -> Result<EmbeddingVector, EmbedError> {
    let n = v.norm();
    if n == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    if !n.is_finite() {
        return Err(EmbedError::NonFinite);
    }
    Ok(EmbeddingVector {
        values: v.values.iter().map(|&x| (f64::from(x) / n) as f32).collect(),
    })
}

pub trait EmbeddingBackend: Send + Sync {
    fn dim(&self) -> usize;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError>;

    fn describe(&self) -> String;
}

#[derive(Clone)]
pub struct EmbedderClient {
    backend: Arc<dyn EmbeddingBackend>,
    /// Character budget per input; longer inputs are cut client-side.
    pub truncate_chars: usize,
    pub batch_size: usize,
}

impl std::fmt::Debug for EmbedderClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbedderClient")
            .field("backend", &self.backend.describe())
            .field("dim", &self.dim())
            .field("truncate_chars", &self.truncate_chars)
            .finish()
    }
}

pub const DEFAULT_TRUNCATE_CHARS: usize = 1024;

fn truncate_chars(text: &str, limit: usize) -> &str {
    match text.char_indices().nth(limit) {
        Some((byte, _)) => &text[..byte],
        None => text,
    }
}

impl EmbedderClient {
    pub fn new(backend: Arc<dyn EmbeddingBackend>) -> Self {
        EmbedderClient {
            backend,
            truncate_chars: DEFAULT_TRUNCATE_CHARS,
            batch_size: 64,
        }
    }

    pub fn mock(dim: usize) -> Self {
        Self::new(Arc::new(HashingEmbedder::new(dim)))
    }

    pub fn dim(&self) -> usize {
        self.backend.dim()
    }

    pub fn describe(&self) -> String {
        self.backend.describe()
    }

    /// Embeds texts in order, one unit vector each.
    pub fn embed_texts<S: AsRef<str>>(&self, texts: &[S]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.is_empty() {
            return Err(EmbedError::EmptyBatch);
        }
        let mut prepared = Vec::with_capacity(texts.len());
        for (i, t) in texts.iter().enumerate() {
            let t = t.as_ref();
            if t.trim().is_empty() {
                return Err(EmbedError::EmptyText(i));
            }
            prepared.push(truncate_chars(t, self.truncate_chars).to_string());
        }
        let dim = self.dim();
        let mut out = Vec::with_capacity(prepared.len());
        for chunk in prepared.chunks(self.batch_size.max(1)) {
            let rows = self.backend.embed_batch(chunk)?;
            if rows.len() != chunk.len() {
                return Err(EmbedError::Protocol(format!(
                    "{} vectors returned for {} inputs",
                    rows.len(),
                    chunk.len()
                )));
            }
            for row in rows {
                if row.len() != dim {
                    return Err(EmbedError::DimMismatch {
                        expected: dim,
                        found: row.len(),
                    });
                }
                out.push(normalize(&EmbeddingVector::new(row)?)?);
            }
        }
        Ok(out)
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        Ok(self.embed_texts(&[text])?.remove(0))
    }
}
