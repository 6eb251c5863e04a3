//! Benchmark construction with a judge model: medical-relevance filtering,
//! BM25 plus judge matching of queries to documents with self-verification,
//! and filtering of weakly relevant pairs. Output is a BEIR dataset and a
//! QC report.

mod heuristic;
mod judge;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use heuristic::HeuristicJudge;
pub use judge::{ask_json, extract_json_object, JudgeFailure, REPAIR_REMINDER};

use crate::corpus::{CorpusError, CorpusStore, Dataset, Document, Query, RelevanceJudgments};
use crate::hyde::derive_seed;
use crate::retrieval::{Bm25Index, Bm25Params, RetrievalError, Tokenizer};
use crate::textgen::{prompt, GeneratorClient, TextgenError};

pub const QC_JSON: &str = "qc_report.json";
pub const QC_TEXT: &str = "qc_report.txt";

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Textgen(#[from] TextgenError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A raw query, with the reference answer when the source provides one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchQuery {
    #[serde(rename = "_id")]
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

impl BenchQuery {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        BenchQuery {
            id: id.into(),
            text: text.into(),
            answer: None,
        }
    }

    pub fn with_answer(mut self, answer: impl Into<String>) -> Self {
        self.answer = Some(answer.into());
        self
    }
}

/// Text presented to the medical-relevance judge as a question and answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextItem {
    pub id: String,
    pub question: String,
    pub answer: String,
}

impl TextItem {
    pub fn from_query(q: &BenchQuery) -> Self {
        TextItem {
            id: q.id.clone(),
            question: q.text.clone(),
            answer: q.answer.clone().unwrap_or_default(),
        }
    }

    pub fn from_document(d: &Document) -> Self {
        TextItem {
            id: d.id.clone(),
            question: d.title.clone().unwrap_or_default(),
            answer: d.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgedText {
    pub id: String,
    pub med_score: f64,
    pub rationale: String,
    pub removed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    MedicalQueries,
    MedicalDocuments,
    Matching,
    PseudoRelevance,
}

impl Stage {
    fn label(self) -> &'static str {
        match self {
            Stage::MedicalQueries => "medical filter (queries)",
            Stage::MedicalDocuments => "medical filter (documents)",
            Stage::Matching => "positive-pair matching",
            Stage::PseudoRelevance => "pseudo-relevance filter",
        }
    }
}

/// An item the judge could not score, held for manual review.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub stage: Stage,
    pub id: String,
    pub raw: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome<T> {
    pub kept: Vec<T>,
    pub removed: Vec<T>,
    pub review: Vec<ReviewItem>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairOrigin {
    /// Found by retrieval, reranking, evidence extraction and validation.
    #[default]
    Matched,
    /// Given with the input.
    Supplied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub query_id: String,
    pub doc_id: String,
    pub evidence_spans: Vec<String>,
    pub generated_answer: String,
    pub validated: bool,
    /// Similarity of the generated and reference answers.
    pub validation_score: Option<f64>,
    /// Normalized query-document quality score, set by the last stage.
    pub rel_score: Option<f64>,
    #[serde(default)]
    pub origin: PairOrigin,
}

impl CandidatePair {
    pub fn supplied(query_id: impl Into<String>, doc_id: impl Into<String>) -> Self {
        CandidatePair {
            query_id: query_id.into(),
            doc_id: doc_id.into(),
            evidence_spans: Vec::new(),
            generated_answer: String::new(),
            validated: false,
            validation_score: None,
            rel_score: None,
            origin: PairOrigin::Supplied,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub query_id: String,
    pub doc_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchOutcome {
    /// Reranked candidates, best first.
    pub candidates: Vec<String>,
    pub pairs: Vec<CandidatePair>,
    pub rejected: Vec<Rejection>,
    pub review: Vec<ReviewItem>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Thresholds must be configured explicitly.
    #[default]
    Production,
    /// Missing thresholds fall back to the test defaults.
    Test,
}

pub const TEST_MED_THRESHOLD: f64 = 0.5;
pub const TEST_REL_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: RunMode,
    pub med_threshold: Option<f64>,
    pub rel_threshold: Option<f64>,
    pub bm25_top_k: usize,
    pub rerank_top_m: usize,
    /// A stage whose review bucket exceeds this fraction of its input flags the run.
    pub max_review_fraction: f64,
    pub bm25: Bm25Params,
    pub tokenizer: Tokenizer,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: RunMode::Production,
            med_threshold: None,
            rel_threshold: None,
            bm25_top_k: 20,
            rerank_top_m: 3,
            max_review_fraction: 0.1,
            bm25: Bm25Params::default(),
            tokenizer: Tokenizer::CjkBigram,
            seed: 0,
        }
    }
}

/// Thresholds after applying the run mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub med: f64,
    pub rel: f64,
}

impl PipelineConfig {
    pub fn test() -> Self {
        PipelineConfig {
            mode: RunMode::Test,
            ..Default::default()
        }
    }

    pub fn thresholds(&self) -> Result<Thresholds, BenchError> {
        let pick = |v: Option<f64>, fallback: f64, name: &str| -> Result<f64, BenchError> {
            let v = match (v, self.mode) {
                (Some(v), _) => v,
                (None, RunMode::Test) => fallback,
                (None, RunMode::Production) => {
                    return Err(BenchError::Config(format!("{name} must be set outside test mode")))
                }
            };
            if !(0.0..=1.0).contains(&v) {
                return Err(BenchError::Config(format!("{name} {v} is outside [0, 1]")));
            }
            Ok(v)
        };
        if self.bm25_top_k == 0 || self.rerank_top_m == 0 {
            return Err(BenchError::Config("bm25_top_k and rerank_top_m must be positive".into()));
        }
        Ok(Thresholds {
            med: pick(self.med_threshold, TEST_MED_THRESHOLD, "med_threshold")?,
            rel: pick(self.rel_threshold, TEST_REL_THRESHOLD, "rel_threshold")?,
        })
    }
}

fn review(stage: Stage, id: &str, f: JudgeFailure) -> ReviewItem {
    ReviewItem {
        stage,
        id: id.to_string(),
        raw: f.raw,
        error: f.error,
    }
}

/// Keeps items whose medical score is at least `threshold`.
pub fn medical_relevance_filter(
    items: &[TextItem],
    judge: &GeneratorClient,
    threshold: f64,
    stage: Stage,
    seed: u64,
) -> Result<FilterOutcome<JudgedText>, BenchError> {
    let verdicts: Vec<Result<Result<(f64, String), JudgeFailure>, TextgenError>> = items
        .par_iter()
        .map(|item| {
            let p = judge.prompts().render(
                prompt::MEDICAL_RELEVANCE,
                &[("QUESTION", item.question.as_str()), ("ANSWER", item.answer.as_str())],
            )?;
            Ok(ask_json(judge, &p, derive_seed(seed, &["medical", &item.id]), |m| {
                let score = judge::number(m, "label").or_else(|_| judge::number(m, "score"))?;
                if !(0.0..=1.0).contains(&score) {
                    return Err(format!("score {score} is outside [0, 1]"));
                }
                Ok((score, judge::rationale(m, &["reason", "explanation"])))
            }))
        })
        .collect();
    let mut out = FilterOutcome {
        kept: Vec::new(),
        removed: Vec::new(),
        review: Vec::new(),
    };
    for (item, v) in items.iter().zip(verdicts) {
        match v? {
            Ok((med_score, rationale)) => {
                let removed = med_score < threshold;
                let j = JudgedText {
                    id: item.id.clone(),
                    med_score,
                    rationale,
                    removed,
                };
                if removed {
                    out.removed.push(j);
                } else {
                    out.kept.push(j);
                }
            }
            Err(f) => out.review.push(review(stage, &item.id, f)),
        }
    }
    Ok(out)
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub const NO_ANSWER_MARKER: &str = "can not answer the question";

/// Retrieves BM25 candidates for `query`, has the judge rerank them, and
/// keeps each of the top `rerank_top_m` documents whose extracted evidence
/// yields an answer that validates against the reference.
pub fn match_positive_pairs(
    query: &BenchQuery,
    bm25: &Bm25Index,
    docs: &CorpusStore,
    judge: &GeneratorClient,
    cfg: &PipelineConfig,
) -> Result<MatchOutcome, BenchError> {
    let th = cfg.thresholds()?;
    let mut out = MatchOutcome::default();
    let hits = bm25.search(&query.text, cfg.bm25_top_k)?;
    if hits.is_empty() {
        return Ok(out);
    }
    let retrieved: Vec<&Document> = hits.ids().filter_map(|id| docs.get(id)).collect();
    let passages: String = retrieved
        .iter()
        .enumerate()
        .map(|(i, d)| format!("[{}] {}", i + 1, one_line(&d.indexed_text())))
        .collect::<Vec<_>>()
        .join("\n");
    let p = judge.prompts().render(
        prompt::PASSAGE_RERANKING,
        &[("QUESTION", query.text.as_str()), ("PASSAGES", passages.as_str())],
    )?;
    let n = retrieved.len();
    let ranking = ask_json(judge, &p, derive_seed(cfg.seed, &["rerank", &query.id]), |m| {
        let mut seen = HashSet::new();
        let order: Vec<usize> = judge::index_list(m, "ranking")?
            .into_iter()
            .filter(|&i| (1..=n).contains(&i) && seen.insert(i))
            .collect();
        if order.is_empty() {
            return Err("ranking names no listed passage".into());
        }
        Ok(order)
    });
    let ranking = match ranking {
        Ok(r) => r,
        Err(f) => {
            out.review.push(review(Stage::Matching, &query.id, f));
            return Ok(out);
        }
    };
    let reference = query.answer.as_deref();
    for &i in ranking.iter().take(cfg.rerank_top_m) {
        let doc = retrieved[i - 1];
        out.candidates.push(doc.id.clone());
        let item_id = format!("{}/{}", query.id, doc.id);
        let reject = |reason: &str| Rejection {
            query_id: query.id.clone(),
            doc_id: doc.id.clone(),
            reason: reason.to_string(),
        };
        let text = doc.indexed_text();
        let p = judge.prompts().render(
            prompt::EVIDENCE_EXTRACTING,
            &[
                ("QUESTION", query.text.as_str()),
                ("ANSWER", reference.unwrap_or("")),
                ("DOCUMENT", text.as_str()),
            ],
        )?;
        let spans = match ask_json(judge, &p, derive_seed(cfg.seed, &["evidence", &item_id]), |m| {
            judge::string_list(m, "evidence_spans")
        }) {
            Ok(s) => s.into_iter().filter(|s| !s.trim().is_empty()).collect::<Vec<_>>(),
            Err(f) => {
                out.review.push(review(Stage::Matching, &item_id, f));
                continue;
            }
        };
        if spans.is_empty() {
            out.rejected.push(reject("no evidence"));
            continue;
        }
        let spans_json = serde_json::to_string(&spans).expect("strings serialize");
        let p = judge.prompts().render(
            prompt::ANSWER_BY_EVIDENCE,
            &[("QUESTION", query.text.as_str()), ("EVIDENCE_SPANS", spans_json.as_str())],
        )?;
        let answer = match ask_json(judge, &p, derive_seed(cfg.seed, &["answer", &item_id]), |m| {
            judge::string(m, "answer")
        }) {
            Ok(a) => a,
            Err(f) => {
                out.review.push(review(Stage::Matching, &item_id, f));
                continue;
            }
        };
        if answer.trim().is_empty() || answer.to_lowercase().contains(NO_ANSWER_MARKER) {
            out.rejected.push(reject("evidence does not answer the question"));
            continue;
        }
        let p = judge.prompts().render(
            prompt::VALIDATE_ANSWER,
            &[
                ("QUESTION", query.text.as_str()),
                ("REFERENCE_ANSWER", reference.unwrap_or(text.as_str())),
                ("MODEL_ANSWER", answer.as_str()),
            ],
        )?;
        let score = match ask_json(judge, &p, derive_seed(cfg.seed, &["validate", &item_id]), |m| {
            let s = judge::number(m, "similarity_score")?;
            if !(0.0..=1.0).contains(&s) {
                return Err(format!("similarity {s} is outside [0, 1]"));
            }
            Ok(s)
        }) {
            Ok(s) => s,
            Err(f) => {
                out.review.push(review(Stage::Matching, &item_id, f));
                continue;
            }
        };
        if score < th.rel {
            out.rejected.push(reject("answer failed validation"));
            continue;
        }
        out.pairs.push(CandidatePair {
            query_id: query.id.clone(),
            doc_id: doc.id.clone(),
            evidence_spans: spans,
            generated_answer: answer,
            validated: true,
            validation_score: Some(score),
            rel_score: None,
            origin: PairOrigin::Matched,
        });
    }
    Ok(out)
}

/// Scores each pair 1 to 5, normalizes by 5, and keeps scores at or above
/// `threshold`.
pub fn filter_pseudo_relevant(
    pairs: Vec<CandidatePair>,
    queries: &HashMap<String, BenchQuery>,
    docs: &CorpusStore,
    judge: &GeneratorClient,
    threshold: f64,
    seed: u64,
) -> Result<FilterOutcome<CandidatePair>, BenchError> {
    let verdicts: Vec<Result<Result<f64, JudgeFailure>, BenchError>> = pairs
        .par_iter()
        .map(|pair| {
            let q = queries
                .get(&pair.query_id)
                .ok_or_else(|| BenchError::Config(format!("pair names unknown query `{}`", pair.query_id)))?;
            let d = docs
                .get(&pair.doc_id)
                .ok_or_else(|| BenchError::Config(format!("pair names unknown document `{}`", pair.doc_id)))?;
            let text = d.indexed_text();
            let p = judge.prompts().render(
                prompt::QUERY_DOC_RELEVANCE,
                &[("QUERY", q.text.as_str()), ("PASSAGE", text.as_str())],
            )?;
            let id = format!("{}/{}", pair.query_id, pair.doc_id);
            Ok(ask_json(judge, &p, derive_seed(seed, &["relevance", &id]), |m| {
                let s = judge::number(m, "quality_score")?;
                if !(1.0..=5.0).contains(&s) {
                    return Err(format!("quality score {s} is outside 1 to 5"));
                }
                Ok(s / 5.0)
            }))
        })
        .collect();
    let mut out = FilterOutcome {
        kept: Vec::new(),
        removed: Vec::new(),
        review: Vec::new(),
    };
    for (mut pair, v) in pairs.into_iter().zip(verdicts) {
        match v? {
            Ok(score) => {
                pair.rel_score = Some(score);
                if score < threshold {
                    out.removed.push(pair);
                } else {
                    out.kept.push(pair);
                }
            }
            Err(f) => {
                let id = format!("{}/{}", pair.query_id, pair.doc_id);
                out.review.push(review(Stage::PseudoRelevance, &id, f));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct PipelineInput {
    pub documents: Vec<Document>,
    pub queries: Vec<BenchQuery>,
    /// Known query-document pairs; when present, matching is skipped.
    pub pairs: Option<Vec<(String, String)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCounts {
    pub stage: Stage,
    pub input: usize,
    pub kept: usize,
    pub removed: usize,
    pub review: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcReport {
    pub thresholds: Thresholds,
    pub stages: Vec<StageCounts>,
    pub judged_queries: Vec<JudgedText>,
    pub judged_documents: Vec<JudgedText>,
    pub matches: BTreeMap<String, MatchOutcome>,
    pub relevance_removed: Vec<CandidatePair>,
    pub review: Vec<ReviewItem>,
    /// Pairs written to the qrels.
    pub emitted: Vec<CandidatePair>,
    pub flagged: bool,
    pub warnings: Vec<String>,
}

impl QcReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "thresholds: medical >= {}, relevance >= {}",
            self.thresholds.med, self.thresholds.rel
        );
        for c in &self.stages {
            let _ = writeln!(
                s,
                "{:<28} input {:>5}  kept {:>5}  removed {:>5}  review {:>5}",
                c.stage.label(),
                c.input,
                c.kept,
                c.removed,
                c.review
            );
        }
        let _ = writeln!(s, "emitted pairs: {}", self.emitted.len());
        for w in &self.warnings {
            let _ = writeln!(s, "WARNING: {w}");
        }
        if !self.review.is_empty() {
            let _ = writeln!(s, "review bucket:");
            for r in &self.review {
                let _ = writeln!(s, "  [{}] {}: {}", r.stage.label(), r.id, r.error);
            }
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub dataset: Dataset,
    pub report: QcReport,
}

/// Runs every stage and returns the dataset and QC report without writing.
pub fn build_benchmark(
    input: &PipelineInput,
    judge: &GeneratorClient,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput, BenchError> {
    let th = cfg.thresholds()?;
    let mut stages = Vec::new();
    let mut review_all = Vec::new();

    let q_items: Vec<TextItem> = input.queries.iter().map(TextItem::from_query).collect();
    let q_out = medical_relevance_filter(&q_items, judge, th.med, Stage::MedicalQueries, cfg.seed)?;
    let d_items: Vec<TextItem> = input.documents.iter().map(TextItem::from_document).collect();
    let d_out = medical_relevance_filter(&d_items, judge, th.med, Stage::MedicalDocuments, cfg.seed)?;
    for (stage, o, n) in [
        (Stage::MedicalQueries, &q_out, q_items.len()),
        (Stage::MedicalDocuments, &d_out, d_items.len()),
    ] {
        stages.push(StageCounts {
            stage,
            input: n,
            kept: o.kept.len(),
            removed: o.removed.len(),
            review: o.review.len(),
        });
    }
    review_all.extend(q_out.review.iter().cloned());
    review_all.extend(d_out.review.iter().cloned());

    let kept_q: HashSet<&str> = q_out.kept.iter().map(|j| j.id.as_str()).collect();
    let kept_d: HashSet<&str> = d_out.kept.iter().map(|j| j.id.as_str()).collect();
    let queries: Vec<BenchQuery> = input
        .queries
        .iter()
        .filter(|q| kept_q.contains(q.id.as_str()))
        .cloned()
        .collect();
    let store = CorpusStore::from_documents(
        input
            .documents
            .iter()
            .filter(|d| kept_d.contains(d.id.as_str()))
            .cloned()
            .collect(),
    )?;

    let mut matches = BTreeMap::new();
    let candidates: Vec<CandidatePair> = match &input.pairs {
        Some(pairs) => pairs
            .iter()
            .filter(|(q, d)| kept_q.contains(q.as_str()) && kept_d.contains(d.as_str()))
            .map(|(q, d)| CandidatePair::supplied(q, d))
            .collect(),
        None => {
            let bm25 = Bm25Index::build(&store, cfg.bm25, cfg.tokenizer);
            let outcomes: Vec<Result<MatchOutcome, BenchError>> = if store.is_empty() {
                queries.iter().map(|_| Ok(MatchOutcome::default())).collect()
            } else {
                queries
                    .par_iter()
                    .map(|q| match_positive_pairs(q, &bm25, &store, judge, cfg))
                    .collect()
            };
            let mut counts = StageCounts {
                stage: Stage::Matching,
                input: queries.len(),
                kept: 0,
                removed: 0,
                review: 0,
            };
            let mut pairs = Vec::new();
            for (q, o) in queries.iter().zip(outcomes) {
                let o = o?;
                if !o.pairs.is_empty() {
                    counts.kept += 1;
                } else if !o.review.is_empty() {
                    counts.review += 1;
                } else {
                    counts.removed += 1;
                }
                review_all.extend(o.review.iter().cloned());
                pairs.extend(o.pairs.iter().cloned());
                matches.insert(q.id.clone(), o);
            }
            stages.push(counts);
            pairs
        }
    };

    let by_id: HashMap<String, BenchQuery> = queries.iter().map(|q| (q.id.clone(), q.clone())).collect();
    let n_candidates = candidates.len();
    let rel_out = filter_pseudo_relevant(candidates, &by_id, &store, judge, th.rel, cfg.seed)?;
    stages.push(StageCounts {
        stage: Stage::PseudoRelevance,
        input: n_candidates,
        kept: rel_out.kept.len(),
        removed: rel_out.removed.len(),
        review: rel_out.review.len(),
    });
    review_all.extend(rel_out.review.iter().cloned());

    let mut qrels = RelevanceJudgments::new();
    for p in &rel_out.kept {
        qrels.insert(&p.query_id, &p.doc_id, 1);
    }
    let out_queries: Vec<Query> = queries
        .iter()
        .filter(|q| qrels.get(&q.id).is_some())
        .map(|q| Query::new(q.id.clone(), q.text.clone()))
        .collect();

    let mut warnings = Vec::new();
    let mut flagged = false;
    for c in &stages {
        if c.input > 0 && c.review as f64 > cfg.max_review_fraction * c.input as f64 {
            flagged = true;
            warnings.push(format!(
                "{}: {} of {} items need review, above the {:.0}% limit",
                c.stage.label(),
                c.review,
                c.input,
                cfg.max_review_fraction * 100.0
            ));
        }
    }
    if rel_out.kept.is_empty() {
        warnings.push("no query-document pair survived; the dataset has no judgments".into());
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    Ok(PipelineOutput {
        dataset: Dataset {
            corpus: store,
            queries: out_queries,
            qrels,
        },
        report: QcReport {
            thresholds: th,
            stages,
            judged_queries: q_out.kept.into_iter().chain(q_out.removed).collect(),
            judged_documents: d_out.kept.into_iter().chain(d_out.removed).collect(),
            matches,
            relevance_removed: rel_out.removed,
            review: review_all,
            emitted: rel_out.kept,
            flagged,
            warnings,
        },
    })
}

/// [`build_benchmark`], then writes the dataset and both QC report files
/// into `out_dir`.
pub fn run_pipeline(
    input: &PipelineInput,
    judge: &GeneratorClient,
    cfg: &PipelineConfig,
    out_dir: impl AsRef<Path>,
) -> Result<PipelineOutput, BenchError> {
    let out_dir = out_dir.as_ref();
    let out = build_benchmark(input, judge, cfg)?;
    out.dataset.write(out_dir)?;
    let io = |path: std::path::PathBuf| move |source| BenchError::Io { path, source };
    let json = serde_json::to_string_pretty(&out.report).expect("report serializes");
    std::fs::write(out_dir.join(QC_JSON), json + "\n").map_err(io(out_dir.join(QC_JSON)))?;
    std::fs::write(out_dir.join(QC_TEXT), out.report.render()).map_err(io(out_dir.join(QC_TEXT)))?;
    Ok(out)
}
