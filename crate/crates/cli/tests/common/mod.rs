#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slhyde::corpus::{write_corpus, write_qrels, write_queries, Document, Query, RelevanceJudgments};

/// Topic-clustered documents; each query reuses words of one document.
pub fn synthetic_dataset(dir: &Path, docs: usize, queries: usize, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topics = 10;
    let vocab: Vec<Vec<String>> = (0..topics)
        .map(|t| (0..40).map(|w| format!("t{t}w{w}")).collect())
        .collect();
    let shared: Vec<String> = (0..30).map(|w| format!("common{w}")).collect();
    let mut documents = Vec::with_capacity(docs);
    for i in 0..docs {
        let topic = &vocab[i % topics];
        let len = rng.random_range(20..40);
        let words: Vec<&str> = (0..len)
            .map(|_| {
                if rng.random_bool(0.3) {
                    shared.choose(&mut rng).unwrap().as_str()
                } else {
                    topic.choose(&mut rng).unwrap().as_str()
                }
            })
            .collect();
        documents.push(Document::new(format!("doc{i:04}"), words.join(" ")));
    }
    let mut qs = Vec::with_capacity(queries);
    let mut qrels = RelevanceJudgments::new();
    for j in 0..queries {
        let target = &documents[(j * 7919) % docs];
        let words: Vec<&str> = target.text.split(' ').collect();
        let picked: Vec<&str> = words.choose_multiple(&mut rng, 4).copied().collect();
        let id = format!("q{j:03}");
        qs.push(Query::new(id.clone(), picked.join(" ")));
        qrels.insert(&id, &target.id, 1);
    }
    std::fs::create_dir_all(dir).unwrap();
    write_corpus(dir.join("corpus.jsonl"), &documents).unwrap();
    write_queries(dir.join("queries.jsonl"), &qs).unwrap();
    write_qrels(dir.join("qrels.tsv"), &qrels).unwrap();
    dir.to_path_buf()
}

pub fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

/// Every file under `dir`, relative path to contents, sorted.
pub fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(d: &Path, base: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, base, out);
            } else {
                out.push((p.strip_prefix(base).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
