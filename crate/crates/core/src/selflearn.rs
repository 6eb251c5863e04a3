//! Label-free training data: generator fine-tuning pairs selected by
//! retrieval rank, retriever triplets with mined hard negatives, and a
//! reference contrastive loss.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::embed::{dot, EmbedError, EmbedderClient, EmbeddingVector};
use crate::hyde::{derive_seed, fuse, HydeError};
use crate::retrieval::{DenseIndex, RetrievalError, VectorSearch};
use crate::textgen::{
    generate_hypothetical, generate_pseudo_docs, generate_query_for_doc, GeneratorClient, HypoTemplate,
    SamplingConfig, TextgenError,
};

#[derive(Debug, thiserror::Error)]
pub enum SelflearnError {
    #[error("{skipped} of {total} items failed, more than half")]
    TooManySkipped { skipped: usize, total: usize },
    #[error("corpus has {size} documents, need more than {m} to mine {m} negatives")]
    CorpusTooSmall { size: usize, m: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Textgen(#[from] TextgenError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Hyde(#[from] HydeError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypotheticalCandidate {
    pub text: String,
    /// 1-based rank of the source document when searching with this candidate.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftMeta {
    pub doc_id: String,
    pub rank: usize,
    #[serde(rename = "L")]
    pub candidates: usize,
}

/// One generator fine-tuning record: `input` is the query, `output` the
/// selected pseudo-document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftExample {
    pub instruction: String,
    pub input: String,
    pub output: String,
    pub meta: SftMeta,
}

impl SftExample {
    pub fn query(&self) -> &str {
        &self.input
    }

    pub fn response(&self) -> &str {
        &self.output
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TripletMeta {
    /// Inner product of the fused query with each negative, in `neg` order.
    pub neg_scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_source: Option<PseudoSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieverTriplet {
    pub query: String,
    pub pseudo: String,
    pub pos: String,
    pub neg: Vec<String>,
    pub meta: TripletMeta,
}

/// What a candidate is embedded as when ranking it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankScoring {
    #[default]
    CandidateOnly,
    /// Mean of the query and candidate embeddings.
    Fused,
}

pub const DEFAULT_CANDIDATES: usize = 5;
pub const DEFAULT_RANK_CUTOFF: usize = 100;
pub const DEFAULT_NEGATIVES: usize = 7;
pub const DEFAULT_TEMPERATURE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorDataConfig {
    pub candidates: usize,
    /// Documents whose best candidate ranks below this are dropped.
    pub rank_cutoff: usize,
    pub scoring: RankScoring,
    /// Prompt family the examples are trained for.
    pub template: HypoTemplate,
    pub sampling: SamplingConfig,
    pub seed: u64,
}

impl Default for GeneratorDataConfig {
    fn default() -> Self {
        GeneratorDataConfig {
            candidates: DEFAULT_CANDIDATES,
            rank_cutoff: DEFAULT_RANK_CUTOFF,
            scoring: RankScoring::CandidateOnly,
            template: HypoTemplate::Q2P,
            sampling: SamplingConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocRecord {
    pub doc_id: String,
    pub query: String,
    pub candidates: Vec<HypotheticalCandidate>,
    pub selected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GeneratorDataset {
    pub examples: Vec<SftExample>,
    /// Every scored document, including those dropped by the cutoff.
    pub records: Vec<DocRecord>,
    pub over_cutoff: Vec<String>,
    pub skipped: Vec<Skipped>,
}

/// Index of the smallest rank; the first one wins ties.
pub fn select_best(ranks: &[usize]) -> Option<usize> {
    ranks
        .iter()
        .enumerate()
        .min_by_key(|&(i, &r)| (r, i))
        .map(|(i, _)| i)
}

/// The template's instruction text: its lines without slots or bare labels.
pub fn instruction_for(gen: &GeneratorClient, template: HypoTemplate) -> Result<String, TextgenError> {
    let t = gen.prompts().get(template.template_name())?;
    Ok(t.body
        .lines()
        .filter(|l| !l.contains('{'))
        .filter(|l| !l.trim_end().ends_with(':'))
        .collect::<Vec<_>>()
        .join("\n")
        .trim()
        .to_string())
}

/// Search vector for ranking a candidate.
pub fn candidate_vector(
    scoring: RankScoring,
    query: &EmbeddingVector,
    candidate: &EmbeddingVector,
) -> Result<EmbeddingVector, HydeError> {
    match scoring {
        RankScoring::CandidateOnly => Ok(candidate.clone()),
        RankScoring::Fused => fuse(query, std::slice::from_ref(candidate)),
    }
}

fn score_document(
    doc: &Document,
    gen: &GeneratorClient,
    emb: &EmbedderClient,
    index: &DenseIndex,
    cfg: &GeneratorDataConfig,
) -> Result<DocRecord, SelflearnError> {
    let query_cfg = cfg.sampling.with_seed(derive_seed(cfg.seed, &["query", &doc.id]));
    let query = generate_query_for_doc(gen, doc, &query_cfg)?;
    let pseudo_cfg = cfg.sampling.with_seed(derive_seed(cfg.seed, &["pseudo", &doc.id]));
    let texts = generate_pseudo_docs(gen, &query, doc, cfg.candidates, &pseudo_cfg)?;
    let q_vec = emb.embed_one(&query)?;
    let vecs = emb.embed_texts(&texts)?;
    let mut candidates = Vec::with_capacity(texts.len());
    for (text, v) in texts.into_iter().zip(&vecs) {
        let search = candidate_vector(cfg.scoring, &q_vec, v)?;
        candidates.push(HypotheticalCandidate {
            rank: index.rank_of(&search, &doc.id)?,
            text,
        });
    }
    let ranks: Vec<usize> = candidates.iter().map(|c| c.rank).collect();
    let selected = select_best(&ranks).expect("at least one candidate");
    Ok(DocRecord {
        doc_id: doc.id.clone(),
        query,
        candidates,
        selected,
    })
}

fn check_skip_rate(skipped: usize, total: usize) -> Result<(), SelflearnError> {
    if total > 0 && skipped * 2 > total {
        return Err(SelflearnError::TooManySkipped { skipped, total });
    }
    Ok(())
}

/// For each document: synthesize a query, generate candidates conditioned
/// on the document, rank the document with each candidate over the full
/// index, and keep the best candidate.
pub fn build_generator_dataset(
    docs: &[Document],
    gen: &GeneratorClient,
    emb: &EmbedderClient,
    index: &DenseIndex,
    cfg: &GeneratorDataConfig,
) -> Result<GeneratorDataset, SelflearnError> {
    if cfg.candidates == 0 {
        return Err(SelflearnError::Config("candidate count must be at least 1".into()));
    }
    let instruction = instruction_for(gen, cfg.template)?;
    let outcomes: Vec<Result<DocRecord, SelflearnError>> = docs
        .par_iter()
        .map(|d| score_document(d, gen, emb, index, cfg))
        .collect();
    let mut out = GeneratorDataset::default();
    for (doc, outcome) in docs.iter().zip(outcomes) {
        match outcome {
            Ok(record) => {
                let best = &record.candidates[record.selected];
                if best.rank > cfg.rank_cutoff {
                    out.over_cutoff.push(record.doc_id.clone());
                } else {
                    out.examples.push(SftExample {
                        instruction: instruction.clone(),
                        input: record.query.clone(),
                        output: best.text.clone(),
                        meta: SftMeta {
                            doc_id: record.doc_id.clone(),
                            rank: best.rank,
                            candidates: record.candidates.len(),
                        },
                    });
                }
                out.records.push(record);
            }
            Err(e) => {
                log::warn!("document {}: skipped: {e}", doc.id);
                out.skipped.push(Skipped {
                    id: doc.id.clone(),
                    reason: e.to_string(),
                });
            }
        }
    }
    check_skip_rate(out.skipped.len(), docs.len())?;
    if !out.over_cutoff.is_empty() {
        log::info!("{} documents dropped by the rank cutoff", out.over_cutoff.len());
    }
    Ok(out)
}

/// The `m` documents nearest to the mean of the query and pseudo-document
/// embeddings, excluding `positive`, with their scores.
pub fn mine_hard_negatives(
    query: &str,
    pseudo: &str,
    positive: &str,
    emb: &EmbedderClient,
    index: &dyn VectorSearch,
    m: usize,
) -> Result<Vec<(String, f64)>, SelflearnError> {
    if m == 0 {
        return Err(SelflearnError::Config("negative count must be at least 1".into()));
    }
    if index.len() <= m {
        return Err(SelflearnError::CorpusTooSmall { size: index.len(), m });
    }
    let vecs = emb.embed_texts(&[query, pseudo])?;
    let fused = fuse(&vecs[0], &vecs[1..])?;
    let hits = index.search(&fused, m + 1)?;
    Ok(hits
        .into_hits()
        .into_iter()
        .filter(|h| h.doc_id != positive)
        .take(m)
        .map(|h| (h.doc_id, h.score))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoSource {
    /// Ask the (tuned) generator for a fresh pseudo-document.
    #[default]
    Regenerate,
    /// Reuse the selected pseudo-document of the fine-tuning example.
    ReuseSft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrieverDataConfig {
    pub negatives: usize,
    pub pseudo_source: PseudoSource,
    pub template: HypoTemplate,
    pub sampling: SamplingConfig,
    pub seed: u64,
}

impl Default for RetrieverDataConfig {
    fn default() -> Self {
        RetrieverDataConfig {
            negatives: DEFAULT_NEGATIVES,
            pseudo_source: PseudoSource::Regenerate,
            template: HypoTemplate::Q2P,
            sampling: SamplingConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RetrieverDataset {
    pub triplets: Vec<RetrieverTriplet>,
    pub skipped: Vec<Skipped>,
}

fn build_triplet(
    ex: &SftExample,
    gen: &GeneratorClient,
    emb: &EmbedderClient,
    index: &dyn VectorSearch,
    cfg: &RetrieverDataConfig,
) -> Result<RetrieverTriplet, SelflearnError> {
    let pseudo = match cfg.pseudo_source {
        PseudoSource::ReuseSft => ex.output.clone(),
        PseudoSource::Regenerate => {
            let s = cfg.sampling.with_seed(derive_seed(cfg.seed, &["triplet", &ex.meta.doc_id]));
            generate_hypothetical(gen, &ex.input, cfg.template, 1, &s)?.remove(0)
        }
    };
    let mined = mine_hard_negatives(&ex.input, &pseudo, &ex.meta.doc_id, emb, index, cfg.negatives)?;
    let (neg, neg_scores) = mined.into_iter().unzip();
    Ok(RetrieverTriplet {
        query: ex.input.clone(),
        pseudo,
        pos: ex.meta.doc_id.clone(),
        neg,
        meta: TripletMeta {
            neg_scores,
            pseudo_source: Some(cfg.pseudo_source),
        },
    })
}

pub fn build_retriever_dataset(
    sft: &[SftExample],
    gen: &GeneratorClient,
    emb: &EmbedderClient,
    index: &dyn VectorSearch,
    cfg: &RetrieverDataConfig,
) -> Result<RetrieverDataset, SelflearnError> {
    if index.len() <= cfg.negatives {
        return Err(SelflearnError::CorpusTooSmall {
            size: index.len(),
            m: cfg.negatives,
        });
    }
    let outcomes: Vec<Result<RetrieverTriplet, SelflearnError>> = sft
        .par_iter()
        .map(|ex| build_triplet(ex, gen, emb, index, cfg))
        .collect();
    let mut out = RetrieverDataset::default();
    for (ex, outcome) in sft.iter().zip(outcomes) {
        match outcome {
            Ok(t) => out.triplets.push(t),
            Err(e) => {
                log::warn!("example for {}: skipped: {e}", ex.meta.doc_id);
                out.skipped.push(Skipped {
                    id: ex.meta.doc_id.clone(),
                    reason: e.to_string(),
                });
            }
        }
    }
    check_skip_rate(out.skipped.len(), sft.len())?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub tau: f64,
    pub include_in_batch: bool,
    /// In-batch negatives, used only when `include_in_batch` is set.
    pub batch: Vec<EmbeddingVector>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: DEFAULT_TEMPERATURE,
            include_in_batch: false,
            batch: Vec::new(),
        }
    }
}

/// `-ln(e^(pos/tau) / (e^(pos/tau) + sum e^(neg/tau)))`, evaluated stably.
pub fn info_nce(pos: f64, negs: &[f64], tau: f64) -> Result<f64, SelflearnError> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(SelflearnError::Config(format!("temperature must be positive, got {tau}")));
    }
    // ln(1 + sum exp(n - p)), shifted by the largest exponent.
    let p = pos / tau;
    let top = negs.iter().map(|s| s / tau).fold(f64::NEG_INFINITY, f64::max);
    if top <= p {
        let rest: f64 = negs.iter().map(|s| (s / tau - p).exp()).sum();
        return Ok(rest.ln_1p());
    }
    let sum: f64 = (p - top).exp() + negs.iter().map(|s| (s / tau - top).exp()).sum::<f64>();
    Ok((top - p + sum.ln()).max(0.0))
}

pub fn contrastive_loss(
    q: &EmbeddingVector,
    pos: &EmbeddingVector,
    negs: &[EmbeddingVector],
    cfg: &LossConfig,
) -> Result<f64, SelflearnError> {
    let batch: &[EmbeddingVector] = if cfg.include_in_batch { &cfg.batch } else { &[] };
    let s_pos = q.dot(pos)?;
    let mut s_neg = Vec::with_capacity(negs.len() + batch.len());
    for v in batch.iter().chain(negs) {
        if v.dim() != q.dim() {
            return Err(EmbedError::DimMismatch {
                expected: q.dim(),
                found: v.dim(),
            }
            .into());
        }
        s_neg.push(dot(q.values(), v.values()));
    }
    info_nce(s_pos, &s_neg, cfg.tau)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SelflearnError + '_ {
    move |source| SelflearnError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<(), SelflearnError> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| io_err(path)(e.into()))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>, SelflearnError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| SelflearnError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn emit_sft_jsonl(examples: &[SftExample], path: impl AsRef<Path>) -> Result<(), SelflearnError> {
    write_jsonl(path, examples)
}

pub fn read_sft_jsonl(path: impl AsRef<Path>) -> Result<Vec<SftExample>, SelflearnError> {
    read_jsonl(path)
}

pub fn emit_triplets_jsonl(triplets: &[RetrieverTriplet], path: impl AsRef<Path>) -> Result<(), SelflearnError> {
    write_jsonl(path, triplets)
}

pub fn read_triplets_jsonl(path: impl AsRef<Path>) -> Result<Vec<RetrieverTriplet>, SelflearnError> {
    read_jsonl(path)
}

/// The rendered prompt a tuned generator sees at inference for `ex`.
pub fn inference_prompt(gen: &GeneratorClient, ex: &SftExample, template: HypoTemplate) -> Result<String, TextgenError> {
    gen.prompts()
        .render(template.template_name(), &[(template.slot(), ex.input.as_str())])
}
