//! Okapi BM25 over an in-memory inverted index.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::persist::{read_file, write_atomic, Reader};
use super::{Hit, RankedHits, RetrievalError};
use crate::corpus::CorpusStore;

pub const BM25_MAGIC: &[u8; 5] = b"SLHB1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 0.9, b: 0.4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tokenizer {
    /// Lowercase, split on anything that is not alphanumeric.
    Standard,
    /// As `Standard`, but runs of CJK characters become character unigrams
    /// plus adjacent bigrams.
    #[default]
    CjkBigram,
}

impl Tokenizer {
    fn id(self) -> u8 {
        match self {
            Tokenizer::Standard => 0,
            Tokenizer::CjkBigram => 1,
        }
    }

    fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Tokenizer::Standard),
            1 => Some(Tokenizer::CjkBigram),
            _ => None,
        }
    }
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF
        | 0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xAC00..=0xD7AF
        | 0xF900..=0xFAFF
        | 0x20000..=0x2FA1F)
}

fn push_cjk_run(run: &[char], out: &mut Vec<String>) {
    for c in run {
        out.push(c.to_string());
    }
    for pair in run.windows(2) {
        out.push(pair.iter().collect());
    }
}

pub fn tokenize(text: &str, tokenizer: Tokenizer) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
        let word = word.to_lowercase();
        if tokenizer == Tokenizer::Standard || !word.chars().any(is_cjk) {
            out.push(word);
            continue;
        }
        let mut run: Vec<char> = Vec::new();
        let mut other = String::new();
        for c in word.chars() {
            if is_cjk(c) {
                if !other.is_empty() {
                    out.push(std::mem::take(&mut other));
                }
                run.push(c);
            } else {
                if !run.is_empty() {
                    push_cjk_run(&run, &mut out);
                    run.clear();
                }
                other.push(c);
            }
        }
        if !other.is_empty() {
            out.push(other);
        }
        push_cjk_run(&run, &mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    params: Bm25Params,
    tokenizer: Tokenizer,
    doc_ids: Vec<String>,
    doc_lens: Vec<u32>,
    avg_len: f64,
    /// Term to `(doc position, term frequency)`, ascending position.
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

impl Bm25Index {
    pub fn build(store: &CorpusStore, params: Bm25Params, tokenizer: Tokenizer) -> Self {
        Self::from_texts(
            store.documents().iter().map(|d| (d.id.clone(), d.indexed_text())),
            params,
            tokenizer,
        )
    }

    pub fn from_texts<I, S>(docs: I, params: Bm25Params, tokenizer: Tokenizer) -> Self
    where
        I: IntoIterator<Item = (String, S)>,
        S: AsRef<str>,
    {
        let mut doc_ids = Vec::new();
        let mut doc_lens = Vec::new();
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        for (pos, (id, text)) in docs.into_iter().enumerate() {
            let tokens = tokenize(text.as_ref(), tokenizer);
            doc_ids.push(id);
            doc_lens.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push((pos as u32, count));
            }
        }
        let total: u64 = doc_lens.iter().map(|&l| u64::from(l)).sum();
        let avg_len = if doc_lens.is_empty() {
            0.0
        } else {
            total as f64 / doc_lens.len() as f64
        };
        Bm25Index {
            params,
            tokenizer,
            doc_ids,
            doc_lens,
            avg_len,
            postings,
        }
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn tokenizer(&self) -> Tokenizer {
        self.tokenizer
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.doc_ids.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Scores of every document with at least one query term, keyed by position.
    pub fn scores(&self, query: &str) -> BTreeMap<usize, f64> {
        let mut qtf: BTreeMap<String, u32> = BTreeMap::new();
        for t in tokenize(query, self.tokenizer) {
            *qtf.entry(t).or_default() += 1;
        }
        let Bm25Params { k1, b } = self.params;
        let avg = if self.avg_len > 0.0 { self.avg_len } else { 1.0 };
        let mut acc: HashMap<usize, f64> = HashMap::new();
        for (term, count) in &qtf {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(list.len());
            for &(pos, tf) in list {
                let tf = f64::from(tf);
                let dl = f64::from(self.doc_lens[pos as usize]);
                let part = tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avg));
                *acc.entry(pos as usize).or_default() += f64::from(*count) * idf * part;
            }
        }
        acc.into_iter().collect()
    }

    /// Top `k` documents with a positive score.
    pub fn search(&self, query: &str, k: usize) -> Result<RankedHits, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        if self.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        let mut hits = RankedHits::from_unsorted(
            self.scores(query)
                .into_iter()
                .filter(|&(_, s)| s > 0.0)
                .map(|(pos, score)| Hit {
                    doc_id: self.doc_ids[pos].clone(),
                    score,
                })
                .collect(),
        );
        hits.truncate(k);
        Ok(hits)
    }

    /// Layout: magic `SLHB1`, `f64` k1, `f64` b, `u8` tokenizer, `u64` doc
    /// count, then per doc a string id and `u32` length, `u64` term count,
    /// then per term (ascending) a string, `u32` posting count, and
    /// `(u32 position, u32 tf)` pairs. Strings are `u32` length + UTF-8.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        write_atomic(path.as_ref(), |w| {
            w.bytes(BM25_MAGIC)?;
            w.f64(self.params.k1)?;
            w.f64(self.params.b)?;
            w.u8(self.tokenizer.id())?;
            w.u64(self.doc_ids.len() as u64)?;
            for (id, &len) in self.doc_ids.iter().zip(&self.doc_lens) {
                w.str(id)?;
                w.u32(len)?;
            }
            w.u64(self.postings.len() as u64)?;
            for (term, list) in &self.postings {
                w.str(term)?;
                w.u32(list.len() as u32)?;
                for &(pos, tf) in list {
                    w.u32(pos)?;
                    w.u32(tf)?;
                }
            }
            Ok(())
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        let bytes = read_file(path.as_ref())?;
        let mut r = Reader::new(&bytes);
        r.expect_magic(BM25_MAGIC)?;
        let params = Bm25Params {
            k1: r.f64()?,
            b: r.f64()?,
        };
        let tokenizer = Tokenizer::from_id(r.u8()?)
            .ok_or_else(|| RetrievalError::Format("unknown tokenizer id".into()))?;
        let n = r.u64()? as usize;
        let mut doc_ids = Vec::with_capacity(n.min(1 << 20));
        let mut doc_lens = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            doc_ids.push(r.str()?);
            doc_lens.push(r.u32()?);
        }
        let terms = r.u64()?;
        let mut postings = BTreeMap::new();
        for _ in 0..terms {
            let term = r.str()?;
            let count = r.u32()? as usize;
            let mut list = Vec::with_capacity(count.min(1 << 20));
            let mut last = None;
            for _ in 0..count {
                let pos = r.u32()?;
                let tf = r.u32()?;
                if pos as usize >= n || last.is_some_and(|l| l >= pos) {
                    return Err(RetrievalError::Format(format!("bad posting list for `{term}`")));
                }
                last = Some(pos);
                list.push((pos, tf));
            }
            postings.insert(term, list);
        }
        r.finish()?;
        let total: u64 = doc_lens.iter().map(|&l| u64::from(l)).sum();
        let avg_len = if n == 0 { 0.0 } else { total as f64 / n as f64 };
        Ok(Bm25Index {
            params,
            tokenizer,
            doc_ids,
            doc_lens,
            avg_len,
            postings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index(docs: &[(&str, &str)]) -> Bm25Index {
        Bm25Index::from_texts(
            docs.iter().map(|(i, t)| (i.to_string(), *t)),
            Bm25Params::default(),
            Tokenizer::CjkBigram,
        )
    }

    #[test]
    fn tokenizer_splits_and_lowercases() {
        assert_eq!(tokenize("Hernia, BELT-use!", Tokenizer::Standard), ["hernia", "belt", "use"]);
        assert_eq!(tokenize("疝气带", Tokenizer::CjkBigram), ["疝", "气", "带", "疝气", "气带"]);
        assert_eq!(tokenize("疝气带", Tokenizer::Standard), ["疝气带"]);
        assert_eq!(tokenize("covid19疫苗", Tokenizer::CjkBigram), ["covid19", "疫", "苗", "疫苗"]);
    }

    #[test]
    fn two_doc_formula() {
        let idx = index(&[("d1", "a a b"), ("d2", "b c c c d")]);
        let hits = idx.search("a b", 10).unwrap();
        // Hand evaluation, N=2, avgdl=4.
        let idf = |df: f64| (1.0 + (2.0 - df + 0.5) / (df + 0.5)).ln();
        let tfp = |tf: f64, dl: f64| tf * 1.9 / (tf + 0.9 * (0.6 + 0.4 * dl / 4.0));
        let d1 = idf(1.0) * tfp(2.0, 3.0) + idf(2.0) * tfp(1.0, 3.0);
        let d2 = idf(2.0) * tfp(1.0, 5.0);
        assert_eq!(hits.ids().collect::<Vec<_>>(), ["d1", "d2"]);
        assert!((hits.hits()[0].score - d1).abs() < 1e-12);
        assert!((hits.hits()[1].score - d2).abs() < 1e-12);
    }

    #[test]
    fn single_doc_term_and_absent_terms() {
        let idx = index(&[("x", "alpha beta"), ("y", "beta gamma"), ("z", "gamma delta")]);
        assert_eq!(idx.search("alpha", 3).unwrap().ids().next(), Some("x"));
        assert!(idx.search("omega ###", 3).unwrap().is_empty());
        assert!(!idx.scores("alpha").contains_key(&2));
        let empty = index(&[]);
        assert!(matches!(empty.search("a", 1), Err(RetrievalError::EmptyIndex)));
    }

    #[test]
    fn repeated_query_terms_count() {
        let idx = index(&[("x", "alpha beta"), ("y", "gamma")]);
        let once = idx.search("alpha", 1).unwrap().hits()[0].score;
        let twice = idx.search("alpha alpha", 1).unwrap().hits()[0].score;
        assert!((twice - 2.0 * once).abs() < 1e-12);
    }

    #[test]
    fn round_trip() {
        let idx = index(&[("a", "腹股沟疝 treatment"), ("b", "hernia belt"), ("c", "")]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.slhb");
        idx.save(&path).unwrap();
        assert_eq!(&std::fs::read(&path).unwrap()[..5], BM25_MAGIC);
        assert_eq!(Bm25Index::load(&path).unwrap(), idx);
        std::fs::write(&path, b"SLHB0").unwrap();
        assert!(matches!(Bm25Index::load(&path), Err(RetrievalError::Format(_))));
    }
}
