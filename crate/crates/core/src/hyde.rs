//! Hypothetical-document retrieval: generate pseudo-documents for a query,
//! fuse their embeddings with the query embedding, and search.

use std::hash::Hasher;

use fnv::FnvHasher;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Query;
use crate::embed::{EmbedError, EmbedderClient, EmbeddingVector};
use crate::retrieval::{RankedHits, RetrievalError, VectorSearch};
use crate::textgen::{generate_hypothetical, GeneratorClient, HypoTemplate, SamplingConfig};

#[derive(Debug, thiserror::Error)]
pub enum HydeError {
    #[error("fusion config: {0}")]
    Config(String),
    #[error("cannot fuse vectors of dim {expected} and {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    /// Mean of the query and every hypothetical document embedding.
    #[default]
    MeanPool,
    /// Mean of the hypothetical document embeddings alone.
    DocOnly,
    /// Embed `query + " " + hypothetical` as one text.
    Concat,
    /// `MeanPool` with several hypothetical documents.
    MeanPoolK,
}

pub const DEFAULT_POOL_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub strategy: FusionStrategy,
    /// Hypothetical documents per query; 0 means plain query search.
    pub n: usize,
    pub template: HypoTemplate,
    pub sampling: SamplingConfig,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            strategy: FusionStrategy::MeanPool,
            n: 1,
            template: HypoTemplate::Q2P,
            sampling: SamplingConfig::default(),
        }
    }
}

impl FusionConfig {
    pub fn new(strategy: FusionStrategy) -> Self {
        let n = match strategy {
            FusionStrategy::MeanPoolK => DEFAULT_POOL_K,
            _ => 1,
        };
        FusionConfig {
            strategy,
            n,
            ..Default::default()
        }
    }

    pub fn query_only() -> Self {
        FusionConfig {
            n: 0,
            ..Default::default()
        }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_template(mut self, template: HypoTemplate) -> Self {
        self.template = template;
        self
    }

    pub fn with_sampling(mut self, sampling: SamplingConfig) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn validate(&self) -> Result<(), HydeError> {
        if self.strategy == FusionStrategy::Concat && self.n > 1 {
            return Err(HydeError::Config(format!(
                "concat takes one hypothetical document, got n = {}",
                self.n
            )));
        }
        Ok(())
    }
}

/// Arithmetic mean of `vectors`, summed per dimension in sorted order so the
/// result does not depend on input order.
pub fn mean_vector(vectors: &[&EmbeddingVector]) -> Result<EmbeddingVector, HydeError> {
    let first = vectors
        .first()
        .ok_or_else(|| HydeError::Config("no vectors to average".into()))?;
    let dim = first.dim();
    if let Some(bad) = vectors.iter().find(|v| v.dim() != dim) {
        return Err(HydeError::DimMismatch {
            expected: dim,
            found: bad.dim(),
        });
    }
    if vectors.len() == 1 {
        return Ok((*first).clone());
    }
    let count = vectors.len() as f64;
    let mut column = vec![0f32; vectors.len()];
    let mut out = Vec::with_capacity(dim);
    for d in 0..dim {
        for (slot, v) in column.iter_mut().zip(vectors) {
            *slot = v.values()[d];
        }
        column.sort_by(f32::total_cmp);
        let sum: f64 = column.iter().map(|&x| f64::from(x)).sum();
        out.push((sum / count) as f32);
    }
    Ok(EmbeddingVector::new(out)?)
}

/// `(q + sum(pseudo)) / (N + 1)`, not renormalized.
pub fn fuse(q: &EmbeddingVector, pseudo: &[EmbeddingVector]) -> Result<EmbeddingVector, HydeError> {
    let mut all: Vec<&EmbeddingVector> = Vec::with_capacity(pseudo.len() + 1);
    all.push(q);
    all.extend(pseudo);
    mean_vector(&all)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedQuery {
    pub vector: EmbeddingVector,
    pub query_text: String,
    pub hypothetical: Vec<String>,
}

/// Stable seed mixed from a run seed and string keys.
pub fn derive_seed(run_seed: u64, keys: &[&str]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(&run_seed.to_le_bytes());
    for k in keys {
        h.write(&(k.len() as u64).to_le_bytes());
        h.write(k.as_bytes());
    }
    h.finish()
}

/// Per-query generation seed, mixed from the run seed and the query id.
pub fn query_seed(run_seed: u64, query_id: &str) -> u64 {
    derive_seed(run_seed, &[query_id])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HydeResult {
    pub query_id: String,
    pub hypothetical: Vec<String>,
    pub hits: RankedHits,
    /// Set when generation failed and the query was searched alone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degraded: Option<String>,
}

impl HydeResult {
    pub fn is_degraded(&self) -> bool {
        self.degraded.is_some()
    }
}

/// Builds the search vector for `query`. A generator failure yields the
/// plain query embedding and the failure message.
pub fn fuse_query(
    query: &Query,
    gen: &GeneratorClient,
    emb: &EmbedderClient,
    cfg: &FusionConfig,
) -> Result<(FusedQuery, Option<String>), HydeError> {
    cfg.validate()?;
    let text = query.text.trim();
    let plain = |warning: Option<String>| -> Result<(FusedQuery, Option<String>), HydeError> {
        Ok((
            FusedQuery {
                vector: emb.embed_one(text)?,
                query_text: text.to_string(),
                hypothetical: Vec::new(),
            },
            warning,
        ))
    };
    if cfg.n == 0 {
        return plain(None);
    }
    let sampling = cfg
        .sampling
        .with_seed(query_seed(cfg.sampling.seed.unwrap_or(0), &query.id));
    let hypothetical = match generate_hypothetical(gen, text, cfg.template, cfg.n, &sampling) {
        Ok(h) => h,
        Err(e) => {
            log::warn!("query {}: generation failed, searching query alone: {e}", query.id);
            return plain(Some(e.to_string()));
        }
    };
    let vector = match cfg.strategy {
        FusionStrategy::Concat => emb.embed_one(&format!("{text} {}", hypothetical[0]))?,
        FusionStrategy::DocOnly => {
            let vecs = emb.embed_texts(&hypothetical)?;
            mean_vector(&vecs.iter().collect::<Vec<_>>())?
        }
        FusionStrategy::MeanPool | FusionStrategy::MeanPoolK => {
            let q = emb.embed_one(text)?;
            fuse(&q, &emb.embed_texts(&hypothetical)?)?
        }
    };
    Ok((
        FusedQuery {
            vector,
            query_text: text.to_string(),
            hypothetical,
        },
        None,
    ))
}

pub fn hyde_search(
    query: &Query,
    gen: &GeneratorClient,
    emb: &EmbedderClient,
    index: &dyn VectorSearch,
    cfg: &FusionConfig,
    k: usize,
) -> Result<HydeResult, HydeError> {
    let (fused, degraded) = fuse_query(query, gen, emb, cfg)?;
    Ok(HydeResult {
        query_id: query.id.clone(),
        hits: index.search(&fused.vector, k)?,
        hypothetical: fused.hypothetical,
        degraded,
    })
}

/// Runs [`hyde_search`] over every query in parallel; output keeps input order.
pub fn hyde_search_all(
    queries: &[Query],
    gen: &GeneratorClient,
    emb: &EmbedderClient,
    index: &dyn VectorSearch,
    cfg: &FusionConfig,
    k: usize,
) -> Result<Vec<HydeResult>, HydeError> {
    queries
        .par_iter()
        .map(|q| hyde_search(q, gen, emb, index, cfg, k))
        .collect()
}

pub fn write_trace(path: impl AsRef<std::path::Path>, results: &[HydeResult]) -> std::io::Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in results {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CorpusStore, Document};
    use crate::embed::cache_embeddings;
    use crate::retrieval::DenseIndex;
    use crate::textgen::MockGenerator;
    use std::sync::Arc;

    fn v(x: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn fuse_examples() {
        assert_eq!(fuse(&v(&[1.0, 0.0]), &[v(&[0.0, 1.0])]).unwrap(), v(&[0.5, 0.5]));
        let u = v(&[0.6, 0.8]);
        assert_eq!(fuse(&u, &[u.clone(), u.clone()]).unwrap(), u);
        assert_eq!(fuse(&u, &[]).unwrap(), u);
        let a = [v(&[0.1, 0.7]), v(&[0.3, -0.2]), v(&[1e-7, 0.9])];
        let b = [a[2].clone(), a[0].clone(), a[1].clone()];
        assert_eq!(fuse(&u, &a).unwrap(), fuse(&u, &b).unwrap());
        assert!(matches!(fuse(&u, &[v(&[1.0])]), Err(HydeError::DimMismatch { .. })));
    }

    fn setup(docs: &[(&str, &str)]) -> (CorpusStore, EmbedderClient, DenseIndex) {
        let store = CorpusStore::from_documents(docs.iter().map(|(i, t)| Document::new(*i, *t)).collect()).unwrap();
        let emb = EmbedderClient::mock(256);
        let dir = tempfile::tempdir().unwrap();
        let (cache, _) = cache_embeddings(&emb, &store, dir.path().join("c.bin")).unwrap();
        (store, emb, DenseIndex::new(Arc::new(cache)))
    }

    const DOCS: &[(&str, &str)] = &[
        ("d1", "inguinal hernia in infants is often repaired surgically"),
        ("d2", "a hernia belt can relieve symptoms temporarily"),
        ("d3", "covid vaccines reduce severe disease"),
        ("d4", "wash hands to avoid infection"),
    ];

    #[test]
    fn zero_n_matches_dense_search() {
        let (_, emb, index) = setup(DOCS);
        let gen = GeneratorClient::mock(MockGenerator::builder().unreachable().build());
        let q = Query::new("q1", "  can a belt treat hernia ");
        let r = hyde_search(&q, &gen, &emb, &index, &FusionConfig::query_only(), 4).unwrap();
        let direct = index.search(&emb.embed_one("can a belt treat hernia").unwrap(), 4).unwrap();
        assert_eq!(r.hits, direct);
        assert!(!r.is_degraded());
    }

    #[test]
    fn generator_failure_degrades() {
        let (_, emb, index) = setup(DOCS);
        let gen = GeneratorClient::mock(MockGenerator::builder().unreachable().build());
        let q = Query::new("q1", "vaccine");
        let r = hyde_search(&q, &gen, &emb, &index, &FusionConfig::default(), 2).unwrap();
        assert!(r.is_degraded());
        assert!(r.hypothetical.is_empty());
        assert_eq!(r.hits, index.search(&emb.embed_one("vaccine").unwrap(), 2).unwrap());
    }

    #[test]
    fn doc_only_with_stored_text_ranks_it_first() {
        let (_, emb, index) = setup(DOCS);
        let gen = GeneratorClient::mock(MockGenerator::builder().always(DOCS[3].1).build());
        let cfg = FusionConfig::new(FusionStrategy::DocOnly);
        let r = hyde_search(&Query::new("q", "hygiene"), &gen, &emb, &index, &cfg, 1).unwrap();
        assert_eq!(r.hits.ids().next(), Some("d4"));
    }

    #[test]
    fn mean_pool_with_exact_doc_never_hurts_its_rank() {
        let (store, emb, index) = setup(DOCS);
        for doc in store.documents() {
            let gen = GeneratorClient::mock(MockGenerator::builder().always(&doc.text).build());
            let q = Query::new("q", "what should I know about this");
            let base = index.rank_of(&emb.embed_one(&q.text).unwrap(), &doc.id).unwrap();
            let (fused, _) = fuse_query(&q, &gen, &emb, &FusionConfig::default()).unwrap();
            assert!(index.rank_of(&fused.vector, &doc.id).unwrap() <= base);
        }
    }

    #[test]
    fn concat_and_config_rules() {
        assert!(FusionConfig::new(FusionStrategy::Concat).with_n(2).validate().is_err());
        assert_eq!(FusionConfig::new(FusionStrategy::MeanPoolK).n, 5);
        let (_, emb, index) = setup(DOCS);
        let gen = GeneratorClient::mock(MockGenerator::builder().always("hernia belt").build());
        let cfg = FusionConfig::new(FusionStrategy::Concat);
        let r = hyde_search(&Query::new("q", "relief"), &gen, &emb, &index, &cfg, 4).unwrap();
        let direct = index.search(&emb.embed_one("relief hernia belt").unwrap(), 4).unwrap();
        assert_eq!(r.hits, direct);
    }

    #[test]
    fn seeded_runs_repeat() {
        let (_, emb, index) = setup(DOCS);
        let gen = GeneratorClient::mock(MockGenerator::paraphraser());
        let cfg = FusionConfig::new(FusionStrategy::MeanPoolK).with_sampling(SamplingConfig::default().with_seed(9));
        let qs = vec![Query::new("a", "hernia repair in children"), Query::new("b", "vaccine effect")];
        let one = hyde_search_all(&qs, &gen, &emb, &index, &cfg, 3).unwrap();
        let two = hyde_search_all(&qs, &gen, &emb, &index, &cfg, 3).unwrap();
        assert_eq!(one, two);
        assert_eq!(one[0].hypothetical.len(), 5);
    }
}
