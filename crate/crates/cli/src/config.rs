//! Run configuration: one TOML file, `${VAR}` interpolation in string
//! values, command-line overrides on top.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use slhyde::benchkit::PipelineConfig;
use slhyde::hyde::FusionConfig;
use slhyde::metrics::Metric;
use slhyde::selflearn::{GeneratorDataConfig, RetrieverDataConfig, DEFAULT_TEMPERATURE};
use slhyde::textgen::HypoTemplate;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ClientMode {
    Remote,
    /// Offline generator, embedder and judge; no network.
    #[default]
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    /// Directory holding corpus.jsonl, queries.jsonl and qrels.tsv.
    pub path: PathBuf,
    /// Hypothetical-document prompt; chosen from the name when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<HypoTemplate>,
}

impl DatasetConfig {
    pub fn template(&self) -> HypoTemplate {
        self.template.unwrap_or_else(|| HypoTemplate::for_dataset(&self.name))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub url: String,
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
    pub timeout_secs: u64,
    /// Embedding width; embedders only.
    pub dim: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            url: String::new(),
            model: String::new(),
            token: None,
            timeout_secs: 120,
            dim: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    pub dim: usize,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig { dim: 256 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexKind {
    #[default]
    Exact,
    Ann,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k: usize,
    pub index: IndexKind,
    pub ann_search_breadth: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k: 100,
            index: IndexKind::Exact,
            ann_search_breadth: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelflearnConfig {
    /// Documents drawn per dataset for fine-tuning data; all when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_docs: Option<usize>,
    /// Where build-retriever-data reads `<dataset>.sft.jsonl`; the
    /// build-sft-data output under `out` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sft_dir: Option<PathBuf>,
    pub generator: GeneratorDataConfig,
    pub retriever: RetrieverDataConfig,
    /// Reported with the triplets for the external trainer.
    pub temperature: f64,
}

impl Default for SelflearnConfig {
    fn default() -> Self {
        SelflearnConfig {
            sample_docs: None,
            sft_dir: None,
            generator: GeneratorDataConfig::default(),
            retriever: RetrieverDataConfig::default(),
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub metrics: Vec<String>,
    pub repeats: usize,
    /// Compare against plain query-embedding search.
    pub baseline: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            metrics: vec!["ndcg@10".into(), "recall@100".into()],
            repeats: 5,
            baseline: true,
        }
    }
}

impl EvalConfig {
    pub fn parsed_metrics(&self) -> Result<Vec<Metric>, CliError> {
        self.metrics
            .iter()
            .map(|m| m.parse().map_err(|e| CliError::Validation(format!("eval.metrics: {e}"))))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Raw documents, corpus.jsonl layout.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub documents: Option<PathBuf>,
    /// Raw queries as JSONL with `_id`, `text` and optional `answer`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub queries: Option<PathBuf>,
    /// Known pairs, TSV `query-id<TAB>doc-id`; matching is skipped when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<PathBuf>,
    pub pipeline: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub clients: ClientMode,
    /// Worker threads; rayon's default when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<usize>,
    /// Directory of `<template>.txt` files replacing the shipped prompts.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompts_dir: Option<PathBuf>,
    pub datasets: Vec<DatasetConfig>,
    pub generator: EndpointConfig,
    pub embedder: EndpointConfig,
    /// Judge model for benchmark construction; the generator when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge: Option<EndpointConfig>,
    pub mock: MockConfig,
    pub retrieval: RetrievalConfig,
    pub fusion: FusionConfig,
    pub selflearn: SelflearnConfig,
    pub eval: EvalConfig,
    pub benchmark: BenchmarkConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("runs"),
            clients: ClientMode::Mock,
            parallelism: None,
            prompts_dir: None,
            datasets: Vec::new(),
            generator: EndpointConfig::default(),
            embedder: EndpointConfig::default(),
            judge: None,
            mock: MockConfig::default(),
            retrieval: RetrievalConfig::default(),
            fusion: FusionConfig::default(),
            selflearn: SelflearnConfig::default(),
            eval: EvalConfig::default(),
            benchmark: BenchmarkConfig::default(),
        }
    }
}

/// Replaces `${NAME}` with the value of `lookup(NAME)`; `$$` is a literal `$`.
pub fn interpolate(s: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(at) = rest.find('$') {
        out.push_str(&rest[..at]);
        let tail = &rest[at + 1..];
        if let Some(t) = tail.strip_prefix('$') {
            out.push('$');
            rest = t;
        } else if let Some(t) = tail.strip_prefix('{') {
            let end = t.find('}').ok_or_else(|| format!("unterminated `${{` in {s:?}"))?;
            let name = &t[..end];
            let value = lookup(name).ok_or_else(|| format!("environment variable `{name}` is not set"))?;
            out.push_str(&value);
            rest = &t[end + 1..];
        } else {
            out.push('$');
            rest = tail;
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn interpolate_value(v: &mut toml::Value, lookup: &dyn Fn(&str) -> Option<String>) -> Result<(), String> {
    match v {
        toml::Value::String(s) => *s = interpolate(s, lookup)?,
        toml::Value::Array(items) => {
            for item in items {
                interpolate_value(item, lookup)?;
            }
        }
        toml::Value::Table(t) => {
            for (_, item) in t.iter_mut() {
                interpolate_value(item, lookup)?;
            }
        }
        _ => {}
    }
    Ok(())
}

/// Values given on the command line, applied over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub clients: Option<ClientMode>,
    pub parallelism: Option<usize>,
}

impl RunConfig {
    pub fn parse(text: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<Self, CliError> {
        let mut value: toml::Value = toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        interpolate_value(&mut value, lookup).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        value
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Validation(format!("config: {e}")))
    }

    /// Reads `path`, interpolating from the process environment. Relative
    /// paths in the file are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, &|k| std::env::var(k).ok())?;
        if let Some(base) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out);
        for d in &mut self.datasets {
            fix(&mut d.path);
        }
        for p in [
            &mut self.prompts_dir,
            &mut self.selflearn.sft_dir,
            &mut self.benchmark.documents,
            &mut self.benchmark.queries,
            &mut self.benchmark.pairs,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        if let Some(c) = o.clients {
            self.clients = c;
        }
        if let Some(n) = o.parallelism {
            self.parallelism = Some(n);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        let mut names = HashSet::new();
        for d in &self.datasets {
            if d.name.is_empty() || d.name.contains(['/', '\\']) || d.name.starts_with('.') {
                return bad(format!("dataset name {:?} is not a plain file name", d.name));
            }
            if !names.insert(d.name.as_str()) {
                return bad(format!("dataset `{}` is listed twice", d.name));
            }
        }
        if self.parallelism == Some(0) {
            return bad("parallelism must be at least 1".into());
        }
        if self.retrieval.k == 0 {
            return bad("retrieval.k must be at least 1".into());
        }
        if self.eval.repeats == 0 {
            return bad("eval.repeats must be at least 1".into());
        }
        if !(self.selflearn.temperature > 0.0) {
            return bad("selflearn.temperature must be positive".into());
        }
        self.eval.parsed_metrics()?;
        self.fusion
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        if self.clients == ClientMode::Remote {
            for (name, e) in [("generator", &self.generator), ("embedder", &self.embedder)] {
                if e.url.is_empty() || e.model.is_empty() {
                    return bad(format!("{name}.url and {name}.model are required with remote clients"));
                }
            }
            if self.embedder.dim == 0 {
                return bad("embedder.dim is required with remote clients".into());
            }
        } else if self.mock.dim == 0 {
            return bad("mock.dim must be positive".into());
        }
        Ok(())
    }

    /// TOML of the effective configuration with secrets masked.
    pub fn resolved_toml(&self) -> String {
        let mut c = self.clone();
        for e in [&mut c.generator, &mut c.embedder].into_iter().chain(c.judge.as_mut()) {
            if e.token.is_some() {
                e.token = Some("<redacted>".into());
            }
        }
        toml::to_string(&c).expect("config serializes")
    }

    pub fn dataset(&self, name: &str) -> Option<&DatasetConfig> {
        self.datasets.iter().find(|d| d.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(k: &str) -> Option<String> {
        (k == "TOKEN").then(|| "s3cret".to_string())
    }

    #[test]
    fn interpolation() {
        assert_eq!(interpolate("Bearer ${TOKEN}", &env).unwrap(), "Bearer s3cret");
        assert_eq!(interpolate("cost $$5 and $x", &env).unwrap(), "cost $5 and $x");
        assert!(interpolate("${MISSING}", &env).unwrap_err().contains("MISSING"));
        assert!(interpolate("${TOKEN", &env).is_err());
    }

    #[test]
    fn parse_resolve_and_redact() {
        let text = r#"
            seed = 7
            clients = "remote"
            [generator]
            url = "http://localhost:8000/v1/chat/completions"
            model = "gen"
            token = "${TOKEN}"
            [embedder]
            url = "http://localhost:8000/v1/embeddings"
            model = "emb"
            dim = 8
            [[datasets]]
            name = "CSLRel"
            path = "data/cslrel"
            [selflearn.retriever]
            negatives = 3
        "#;
        let mut cfg = RunConfig::parse(text, &env).unwrap();
        assert_eq!(cfg.generator.token.as_deref(), Some("s3cret"));
        assert_eq!(cfg.selflearn.retriever.negatives, 3);
        assert_eq!(cfg.selflearn.generator.candidates, 5);
        assert_eq!(cfg.datasets[0].template(), HypoTemplate::P2P);
        cfg.validate().unwrap();
        cfg.apply(&Overrides {
            seed: Some(9),
            clients: Some(ClientMode::Mock),
            ..Default::default()
        });
        assert_eq!((cfg.seed, cfg.clients), (9, ClientMode::Mock));
        let resolved = cfg.resolved_toml();
        assert!(!resolved.contains("s3cret"));
        let back = RunConfig::parse(&resolved, &env).unwrap();
        assert_eq!(back.seed, 9);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::parse("sede = 1", &env).is_err());
        let cfg = RunConfig::parse("clients = \"remote\"", &env).unwrap();
        assert!(cfg.validate().is_err());
        let cfg = RunConfig::parse("[eval]\nmetrics = [\"map@10\"]", &env).unwrap();
        assert!(cfg.validate().is_err());
        let cfg = RunConfig::parse("[[datasets]]\nname = \"a\"\npath = \"x\"\n[[datasets]]\nname = \"a\"\npath = \"y\"", &env).unwrap();
        assert!(cfg.validate().is_err());
    }
}
