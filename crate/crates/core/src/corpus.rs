//! Corpus, query set, and relevance judgments in the BEIR on-disk layout.
//!
//! A dataset directory holds three files:
//!
//! * `corpus.jsonl`: one `{"_id", "title"?, "text"}` object per line
//! * `queries.jsonl`: one `{"_id", "text"}` object per line
//! * `qrels.tsv`: `query-id<TAB>corpus-id<TAB>score`, header optional
//!
//! Loaders are strict about malformed input (errors carry the 1-based line
//! number) and lenient about recoverable oddities, which are reported as
//! warnings on [`Loaded`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const QUERIES_FILE: &str = "queries.jsonl";
pub const QRELS_FILE: &str = "qrels.tsv";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("line {line}: field `{field}` is empty")]
    EmptyField { line: usize, field: &'static str },
    #[error("line {line}: negative relevance grade {grade}")]
    NegativeGrade { line: usize, grade: i64 },
    #[error("line {line}: expected 3 tab-separated columns, found {found}")]
    ColumnCount { line: usize, found: usize },
    #[error("judgments reference unknown query `{0}`")]
    UnknownQuery(String),
    #[error("query `{0}` has no positive judgment")]
    NoPositive(String),
    #[error("cannot sample {requested} documents from a corpus of {available}")]
    SampleTooLarge { requested: usize, available: usize },
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    #[serde(rename = "_id")]
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            title: None,
            text: text.into(),
        }
    }

    pub fn with_title(mut self, title: impl Into<String>) -> Self {
        self.title = Some(title.into());
        self
    }

    /// The text handed to encoders and lexical indexes: `title + "\n" + text`
    /// when a non-empty title exists, otherwise just the text.
    pub fn indexed_text(&self) -> String {
        match self.title.as_deref() {
            Some(t) if !t.trim().is_empty() => format!("{t}\n{}", self.text),
            _ => self.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    #[serde(rename = "_id")]
    pub id: String,
    pub text: String,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Query {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// A loaded value plus the non-fatal problems found while loading it.
#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

impl<T> Loaded<T> {
    fn emit_warnings(self, source: &Path) -> T {
        for w in &self.warnings {
            log::warn!("{}: {w}", source.display());
        }
        self.value
    }
}

/// Ordered, immutable document collection with id lookup.
#[derive(Debug, Clone, Default)]
pub struct CorpusStore {
    documents: Vec<Document>,
    index: HashMap<String, usize>,
}

impl CorpusStore {
    pub fn from_documents(documents: Vec<Document>) -> Result<Self> {
        let mut index = HashMap::with_capacity(documents.len());
        for (pos, doc) in documents.iter().enumerate() {
            if doc.id.is_empty() {
                return Err(CorpusError::EmptyField {
                    line: pos + 1,
                    field: "_id",
                });
            }
            if doc.text.trim().is_empty() {
                return Err(CorpusError::EmptyField {
                    line: pos + 1,
                    field: "text",
                });
            }
            if index.insert(doc.id.clone(), pos).is_some() {
                return Err(CorpusError::DuplicateId(doc.id.clone()));
            }
        }
        Ok(CorpusStore { documents, index })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.index.get(id).map(|&p| &self.documents[p])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.documents.iter().map(|d| d.id.as_str())
    }

    pub fn into_documents(self) -> Vec<Document> {
        self.documents
    }
}

/// Graded judgments, `query-id -> doc-id -> grade`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelevanceJudgments {
    entries: BTreeMap<String, BTreeMap<String, u32>>,
}

impl RelevanceJudgments {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a judgment, returning the grade it replaced.
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) -> Option<u32> {
        self.entries
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade)
    }

    pub fn get(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.entries.get(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entries(&self) -> &BTreeMap<String, BTreeMap<String, u32>> {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks the judgments against a query set: every judged query must
    /// exist and carry at least one positive grade.
    pub fn validate(&self, queries: &[Query]) -> Result<()> {
        let known: HashSet<&str> = queries.iter().map(|q| q.id.as_str()).collect();
        for (qid, docs) in &self.entries {
            if !known.contains(qid.as_str()) {
                return Err(CorpusError::UnknownQuery(qid.clone()));
            }
            if !docs.values().any(|&g| g > 0) {
                return Err(CorpusError::NoPositive(qid.clone()));
            }
        }
        Ok(())
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CorpusError::io(path, e))
}

#[derive(Deserialize)]
struct RawRecord {
    #[serde(rename = "_id")]
    id: Option<serde_json::Value>,
    title: Option<String>,
    text: Option<String>,
}

fn parse_id(value: Option<serde_json::Value>, line: usize) -> Result<String> {
    match value {
        Some(serde_json::Value::String(s)) => Ok(s),
        // Some BEIR dumps store numeric ids.
        Some(serde_json::Value::Number(n)) => Ok(n.to_string()),
        Some(_) => Err(CorpusError::Parse {
            line,
            message: "`_id` must be a string".into(),
        }),
        None => Err(CorpusError::Parse {
            line,
            message: "missing `_id`".into(),
        }),
    }
}

fn jsonl_records<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, RawRecord)>> {
    reader.lines().enumerate().filter_map(|(i, line)| {
        let line_no = i + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                return Some(Err(CorpusError::Parse {
                    line: line_no,
                    message: e.to_string(),
                }))
            }
        };
        if line.trim().is_empty() {
            return None;
        }
        Some(
            serde_json::from_str::<RawRecord>(&line)
                .map(|r| (line_no, r))
                .map_err(|e| CorpusError::Parse {
                    line: line_no,
                    message: e.to_string(),
                }),
        )
    })
}

pub fn read_corpus<R: Read>(reader: R) -> Result<Loaded<CorpusStore>> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for record in jsonl_records(BufReader::new(reader)) {
        let (line, raw) = record?;
        let id = parse_id(raw.id, line)?;
        if id.is_empty() {
            return Err(CorpusError::EmptyField { line, field: "_id" });
        }
        let text = raw.text.ok_or_else(|| CorpusError::Parse {
            line,
            message: "missing `text`".into(),
        })?;
        if text.trim().is_empty() {
            return Err(CorpusError::EmptyField { line, field: "text" });
        }
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId(id));
        }
        docs.push(Document {
            id,
            title: raw.title,
            text,
        });
    }
    let mut warnings = Vec::new();
    if docs.is_empty() {
        warnings.push("corpus is empty".to_string());
    }
    Ok(Loaded {
        value: CorpusStore::from_documents(docs)?,
        warnings,
    })
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<CorpusStore> {
    let path = path.as_ref();
    Ok(read_corpus(open(path)?)?.emit_warnings(path))
}

pub fn read_queries<R: Read>(reader: R) -> Result<Loaded<Vec<Query>>> {
    let mut queries = Vec::new();
    let mut seen = HashSet::new();
    for record in jsonl_records(BufReader::new(reader)) {
        let (line, raw) = record?;
        let id = parse_id(raw.id, line)?;
        if id.is_empty() {
            return Err(CorpusError::EmptyField { line, field: "_id" });
        }
        let text = raw.text.unwrap_or_default();
        if text.trim().is_empty() {
            return Err(CorpusError::EmptyField { line, field: "text" });
        }
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId(id));
        }
        queries.push(Query { id, text });
    }
    let mut warnings = Vec::new();
    if queries.is_empty() {
        warnings.push("query set is empty".to_string());
    }
    Ok(Loaded {
        value: queries,
        warnings,
    })
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    let path = path.as_ref();
    Ok(read_queries(open(path)?)?.emit_warnings(path))
}

pub fn read_qrels<R: Read>(reader: R) -> Result<Loaded<RelevanceJudgments>> {
    let mut judgments = RelevanceJudgments::new();
    let mut warnings = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(CorpusError::ColumnCount {
                line: line_no,
                found: cols.len(),
            });
        }
        let grade = match cols[2].trim().parse::<i64>() {
            Ok(g) => g,
            // A non-numeric score column on the first line is a header.
            Err(_) if line_no == 1 => continue,
            Err(e) => {
                return Err(CorpusError::Parse {
                    line: line_no,
                    message: format!("grade `{}`: {e}", cols[2]),
                })
            }
        };
        if grade < 0 {
            return Err(CorpusError::NegativeGrade {
                line: line_no,
                grade,
            });
        }
        let grade = u32::try_from(grade).map_err(|_| CorpusError::Parse {
            line: line_no,
            message: format!("grade {grade} out of range"),
        })?;
        let (qid, did) = (cols[0].trim(), cols[1].trim());
        if qid.is_empty() || did.is_empty() {
            return Err(CorpusError::Parse {
                line: line_no,
                message: "empty id column".into(),
            });
        }
        if let Some(prev) = judgments.insert(qid, did, grade) {
            warnings.push(format!(
                "line {line_no}: duplicate judgment ({qid}, {did}); grade {prev} replaced by {grade}"
            ));
        }
    }
    Ok(Loaded {
        value: judgments,
        warnings,
    })
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<RelevanceJudgments> {
    let path = path.as_ref();
    Ok(read_qrels(open(path)?)?.emit_warnings(path))
}

fn write_lines<T, F>(path: &Path, items: &[T], mut line: F) -> Result<()>
where
    F: FnMut(&mut BufWriter<File>, &T) -> std::io::Result<()>,
{
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        line(&mut w, item).map_err(|e| CorpusError::io(path, e))?;
    }
    w.flush().map_err(|e| CorpusError::io(path, e))
}

fn json_line<T: Serialize>(w: &mut impl Write, item: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, item)?;
    w.write_all(b"\n")
}

pub fn write_corpus(path: impl AsRef<Path>, documents: &[Document]) -> Result<()> {
    write_lines(path.as_ref(), documents, json_line)
}

pub fn write_queries(path: impl AsRef<Path>, queries: &[Query]) -> Result<()> {
    write_lines(path.as_ref(), queries, json_line)
}

/// Writes qrels with a `query-id corpus-id score` header, rows in key order.
pub fn write_qrels(path: impl AsRef<Path>, judgments: &RelevanceJudgments) -> Result<()> {
    let rows: Vec<(&str, &str, u32)> = judgments
        .entries
        .iter()
        .flat_map(|(q, docs)| docs.iter().map(move |(d, &g)| (q.as_str(), d.as_str(), g)))
        .collect();
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| CorpusError::io(path, e);
    writeln!(w, "query-id\tcorpus-id\tscore").map_err(io)?;
    for (q, d, g) in rows {
        writeln!(w, "{q}\t{d}\t{g}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// A dataset directory in the BEIR layout.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub corpus: CorpusStore,
    pub queries: Vec<Query>,
    pub qrels: RelevanceJudgments,
}

impl Dataset {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let corpus = load_corpus(dir.join(CORPUS_FILE))?;
        let queries = load_queries(dir.join(QUERIES_FILE))?;
        let qrels = load_qrels(dir.join(QRELS_FILE))?;
        qrels.validate(&queries)?;
        Ok(Dataset {
            corpus,
            queries,
            qrels,
        })
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
        write_corpus(dir.join(CORPUS_FILE), self.corpus.documents())?;
        write_queries(dir.join(QUERIES_FILE), &self.queries)?;
        write_qrels(dir.join(QRELS_FILE), &self.qrels)
    }
}

/// Draws `n` distinct documents, deterministic for a given seed.
pub fn sample_documents(store: &CorpusStore, n: usize, seed: u64) -> Result<Vec<Document>> {
    if n > store.len() {
        return Err(CorpusError::SampleTooLarge {
            requested: n,
            available: store.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, store.len(), n)
        .into_iter()
        .map(|i| store.documents[i].clone())
        .collect())
}
