use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;
use slhyde::benchkit::{self, BenchQuery, HeuristicJudge, PipelineInput};
use slhyde::corpus::{self, CorpusStore, Dataset, Query, CORPUS_FILE, QUERIES_FILE};
use slhyde::embed::{cache_embeddings, CacheStatus, EmbedderClient, EmbeddingCache, EmbeddingsBackend};
use slhyde::hyde::{derive_seed, hyde_search_all, write_trace, FusionConfig, HydeResult};
use slhyde::metrics::{
    aggregate_repeats, build_report, evaluate_run, render_repeats, render_table, report_from_means, write_trec_run,
    EvalReport, Metric, QueryScores, RenderOptions, RepeatSummary, SystemRun,
};
use slhyde::retrieval::{mining_index, AnnIndex, AnnParams, DenseIndex, RankedHits, VectorSearch};
use slhyde::selflearn::{
    build_generator_dataset, build_retriever_dataset, emit_sft_jsonl, emit_triplets_jsonl, read_sft_jsonl, write_jsonl,
};
use slhyde::textgen::{ChatCompletionsBackend, GeneratorClient, MockGenerator, PromptLibrary};

use crate::config::{ClientMode, DatasetConfig, EndpointConfig, IndexKind, RunConfig};
use crate::output::{finish, RunInfo, Staging};
use crate::{CliError, Command, Outcome};

pub const CACHE_DIR: &str = "cache";
pub const SYSTEM_NAME: &str = "hyde";
pub const BASELINE_NAME: &str = "query-only";

/// Clients and prompts shared by every command of one run.
pub struct Context<'a> {
    pub cfg: &'a RunConfig,
    pub prompts: PromptLibrary,
    pub generator: GeneratorClient,
    pub embedder: EmbedderClient,
}

fn endpoint_timeout(e: &EndpointConfig) -> Duration {
    Duration::from_secs(e.timeout_secs)
}

impl<'a> Context<'a> {
    pub fn new(cfg: &'a RunConfig) -> Result<Self, CliError> {
        let mut prompts = PromptLibrary::builtin();
        if let Some(dir) = &cfg.prompts_dir {
            prompts = prompts.with_overrides(dir)?;
        }
        let (generator, embedder) = match cfg.clients {
            ClientMode::Mock => (
                GeneratorClient::mock(MockGenerator::paraphraser()),
                EmbedderClient::mock(cfg.mock.dim),
            ),
            ClientMode::Remote => {
                let g = &cfg.generator;
                let e = &cfg.embedder;
                (
                    GeneratorClient::new(
                        Arc::new(ChatCompletionsBackend::new(&g.url, &g.model, g.token.clone(), endpoint_timeout(g))),
                        &g.model,
                    ),
                    EmbedderClient::new(Arc::new(EmbeddingsBackend::new(
                        &e.url,
                        &e.model,
                        e.dim,
                        e.token.clone(),
                        endpoint_timeout(e),
                    ))),
                )
            }
        };
        Ok(Context {
            cfg,
            generator: generator.with_prompts(prompts.clone()),
            prompts,
            embedder,
        })
    }

    pub fn judge(&self) -> GeneratorClient {
        let client = match (self.cfg.clients, &self.cfg.judge) {
            (ClientMode::Mock, _) => GeneratorClient::new(Arc::new(HeuristicJudge), "heuristic-judge"),
            (ClientMode::Remote, Some(j)) => GeneratorClient::new(
                Arc::new(ChatCompletionsBackend::new(&j.url, &j.model, j.token.clone(), endpoint_timeout(j))),
                &j.model,
            ),
            (ClientMode::Remote, None) => return self.generator.clone(),
        };
        client.with_prompts(self.prompts.clone())
    }

    pub fn cache_path(&self, ds: &DatasetConfig) -> PathBuf {
        self.cfg.out.join(CACHE_DIR).join(format!("{}.slhe", ds.name))
    }

    pub fn corpus_embeddings(&self, ds: &DatasetConfig, store: &CorpusStore) -> Result<(Arc<EmbeddingCache>, CacheStatus), CliError> {
        let (cache, status) = cache_embeddings(&self.embedder, store, self.cache_path(ds))?;
        if status == CacheStatus::Rebuilt {
            log::warn!("{}: embedding cache was rebuilt", ds.name);
        }
        Ok((Arc::new(cache), status))
    }

    fn index(&self, cache: Arc<EmbeddingCache>) -> Box<dyn VectorSearch> {
        match self.cfg.retrieval.index {
            IndexKind::Exact => Box::new(DenseIndex::new(cache)),
            IndexKind::Ann => Box::new(
                AnnIndex::build(cache, AnnParams::default()).with_search_breadth(self.cfg.retrieval.ann_search_breadth),
            ),
        }
    }

    fn fusion(&self, ds: &DatasetConfig, seed: u64) -> FusionConfig {
        let mut f = self.cfg.fusion.clone().with_template(ds.template());
        f.sampling.seed = Some(seed);
        f
    }

    fn finish(&self, command: &str, stage: Staging, degraded: Vec<String>) -> Result<Outcome, CliError> {
        finish(
            &stage,
            RunInfo {
                command,
                config: self.cfg,
                prompts: &self.prompts,
                generator: self.generator.describe(),
                embedder: self.embedder.describe(),
                degraded: degraded.clone(),
            },
        )?;
        for d in &degraded {
            log::warn!("degraded: {d}");
        }
        let dir = stage.promote()?;
        log::info!("{command}: wrote {}", dir.display());
        Ok(Outcome { dir, degraded })
    }
}

fn require_datasets(cfg: &RunConfig) -> Result<&[DatasetConfig], CliError> {
    if cfg.datasets.is_empty() {
        return Err(CliError::Validation("no datasets configured".into()));
    }
    Ok(&cfg.datasets)
}

fn load_corpus(ds: &DatasetConfig) -> Result<CorpusStore, CliError> {
    Ok(corpus::load_corpus(ds.path.join(CORPUS_FILE))?)
}

fn load_queries(ds: &DatasetConfig) -> Result<Vec<Query>, CliError> {
    Ok(corpus::load_queries(ds.path.join(QUERIES_FILE))?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, json + "\n").map_err(|e| CliError::io(path, e))
}

/// Queries and their hits, keyed by query id.
type Run = BTreeMap<String, RankedHits>;

fn plain_run(ctx: &Context<'_>, queries: &[Query], index: &dyn VectorSearch, k: usize) -> Result<Run, CliError> {
    if queries.is_empty() {
        return Ok(Run::new());
    }
    let texts: Vec<&str> = queries.iter().map(|q| q.text.trim()).collect();
    let vectors = ctx.embedder.embed_texts(&texts)?;
    let mut run = Run::new();
    for (q, v) in queries.iter().zip(&vectors) {
        run.insert(q.id.clone(), index.search(v, k)?);
    }
    Ok(run)
}

fn hyde_run(results: Vec<HydeResult>, degraded: &mut Vec<String>, dataset: &str) -> Run {
    let mut run = Run::new();
    for r in results {
        if let Some(why) = &r.degraded {
            degraded.push(format!("{dataset}/{}: {why}", r.query_id));
        }
        run.insert(r.query_id, r.hits);
    }
    run
}

pub fn dispatch(command: &Command, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let ctx = Context::new(cfg)?;
    match command {
        Command::EmbedCorpus => embed_corpus(&ctx),
        Command::Search { .. } => search(&ctx),
        Command::HydeSearch { .. } => hyde_search(&ctx),
        Command::Evaluate { .. } => evaluate(&ctx),
        Command::BuildSftData => build_sft_data(&ctx),
        Command::BuildRetrieverData => build_retriever_data(&ctx),
        Command::ConstructBenchmark => construct_benchmark(&ctx),
    }
}

#[derive(Serialize)]
struct CacheReport {
    documents: usize,
    dim: usize,
    status: String,
}

pub fn embed_corpus(ctx: &Context<'_>) -> Result<Outcome, CliError> {
    let name = "embed-corpus";
    let stage = Staging::new(&ctx.cfg.out.join(name))?;
    let mut report = BTreeMap::new();
    for ds in require_datasets(ctx.cfg)? {
        let store = load_corpus(ds)?;
        let (cache, status) = ctx.corpus_embeddings(ds, &store)?;
        log::info!("{}: {} documents, cache {status:?}", ds.name, cache.len());
        report.insert(
            ds.name.clone(),
            CacheReport {
                documents: cache.len(),
                dim: cache.dim(),
                status: format!("{status:?}").to_lowercase(),
            },
        );
    }
    write_json(&stage.join("caches.json"), &report)?;
    ctx.finish(name, stage, Vec::new())
}

pub fn search(ctx: &Context<'_>) -> Result<Outcome, CliError> {
    let name = "search";
    let stage = Staging::new(&ctx.cfg.out.join(name))?;
    for ds in require_datasets(ctx.cfg)? {
        let store = load_corpus(ds)?;
        let queries = load_queries(ds)?;
        let (cache, _) = ctx.corpus_embeddings(ds, &store)?;
        let index = ctx.index(cache);
        let run = plain_run(ctx, &queries, index.as_ref(), ctx.cfg.retrieval.k)?;
        write_trec_run(stage.join(format!("{}.trec", ds.name)), &run, BASELINE_NAME)?;
    }
    ctx.finish(name, stage, Vec::new())
}

pub fn hyde_search(ctx: &Context<'_>) -> Result<Outcome, CliError> {
    let name = "hyde-search";
    let stage = Staging::new(&ctx.cfg.out.join(name))?;
    let mut degraded = Vec::new();
    for ds in require_datasets(ctx.cfg)? {
        let store = load_corpus(ds)?;
        let queries = load_queries(ds)?;
        let (cache, _) = ctx.corpus_embeddings(ds, &store)?;
        let index = ctx.index(cache);
        let fusion = ctx.fusion(ds, ctx.cfg.seed);
        let results = hyde_search_all(&queries, &ctx.generator, &ctx.embedder, index.as_ref(), &fusion, ctx.cfg.retrieval.k)?;
        let trace = stage.join(format!("{}.trace.jsonl", ds.name));
        write_trace(&trace, &results).map_err(|e| CliError::io(&trace, e))?;
        let run = hyde_run(results, &mut degraded, &ds.name);
        write_trec_run(stage.join(format!("{}.trec", ds.name)), &run, SYSTEM_NAME)?;
    }
    ctx.finish(name, stage, degraded)
}

#[derive(Serialize)]
struct MetricReport {
    summary: RepeatSummary,
    /// Per-dataset means over the repeats.
    mean: EvalReport,
    repeats: Vec<EvalReport>,
}

pub fn repeat_seed(seed: u64, repeat: usize) -> u64 {
    derive_seed(seed, &["repeat", &repeat.to_string()])
}

pub fn evaluate(ctx: &Context<'_>) -> Result<Outcome, CliError> {
    let name = "evaluate";
    let cfg = ctx.cfg;
    let metrics = cfg.eval.parsed_metrics()?;
    let k = metrics
        .iter()
        .map(|m| match m {
            Metric::Ndcg(k) | Metric::Recall(k) => *k,
        })
        .max()
        .unwrap_or(10)
        .max(cfg.retrieval.k);
    let stage = Staging::new(&cfg.out.join(name))?;
    let runs_dir = stage.join("runs");
    std::fs::create_dir_all(&runs_dir).map_err(|e| CliError::io(&runs_dir, e))?;
    let mut degraded = Vec::new();
    // [metric][repeat] -> (dataset, scores)
    let mut system: Vec<Vec<Vec<(String, QueryScores)>>> = vec![vec![Vec::new(); cfg.eval.repeats]; metrics.len()];
    let mut baseline: Vec<Vec<(String, QueryScores)>> = vec![Vec::new(); metrics.len()];

    for ds in require_datasets(cfg)? {
        let data = Dataset::load(&ds.path)?;
        let (cache, _) = ctx.corpus_embeddings(ds, &data.corpus)?;
        let index = ctx.index(cache);
        if cfg.eval.baseline {
            let run = plain_run(ctx, &data.queries, index.as_ref(), k)?;
            write_trec_run(runs_dir.join(format!("{}.{BASELINE_NAME}.trec", ds.name)), &run, BASELINE_NAME)?;
            for (mi, m) in metrics.iter().enumerate() {
                baseline[mi].push((ds.name.clone(), evaluate_run(&run, &data.qrels, *m)?));
            }
        }
        for r in 0..cfg.eval.repeats {
            let fusion = ctx.fusion(ds, repeat_seed(cfg.seed, r));
            let results = hyde_search_all(&data.queries, &ctx.generator, &ctx.embedder, index.as_ref(), &fusion, k)?;
            let run = hyde_run(results, &mut degraded, &ds.name);
            write_trec_run(runs_dir.join(format!("{}.r{r}.trec", ds.name)), &run, SYSTEM_NAME)?;
            for (mi, m) in metrics.iter().enumerate() {
                system[mi][r].push((ds.name.clone(), evaluate_run(&run, &data.qrels, *m)?));
            }
        }
    }

    let opts = RenderOptions::default();
    let mut text = String::new();
    let mut json = BTreeMap::new();
    for (mi, m) in metrics.iter().enumerate() {
        let base = cfg.eval.baseline.then(|| SystemRun {
            name: BASELINE_NAME,
            datasets: &baseline[mi],
        });
        let reports = system[mi]
            .iter()
            .map(|datasets| {
                build_report(
                    *m,
                    SystemRun {
                        name: SYSTEM_NAME,
                        datasets,
                    },
                    base.clone(),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let base_reports = match &base {
            Some(b) => Some(vec![build_report(*m, b.clone(), None)?; reports.len()]),
            None => None,
        };
        let summary = aggregate_repeats(&reports, base_reports.as_deref())?;
        let sys_means: Vec<(&str, f64)> = summary.datasets.iter().map(|s| (s.name.as_str(), s.mean)).collect();
        let base_means: Vec<(&str, f64)> = baseline[mi].iter().map(|(n, s)| (n.as_str(), s.mean())).collect();
        let mean = report_from_means(
            *m,
            (SYSTEM_NAME, &sys_means),
            cfg.eval.baseline.then_some((BASELINE_NAME, base_means.as_slice())),
        )?;
        text.push_str(&render_repeats(&summary, &opts));
        text.push('\n');
        text.push_str(&render_table(&mean, &opts));
        text.push('\n');
        json.insert(
            m.label(),
            MetricReport {
                summary,
                mean,
                repeats: reports,
            },
        );
    }
    write_json(&stage.join("report.json"), &json)?;
    let txt = stage.join("report.txt");
    std::fs::write(&txt, &text).map_err(|e| CliError::io(&txt, e))?;
    ctx.finish(name, stage, degraded)
}

#[derive(Serialize)]
struct SftSummary {
    documents: usize,
    examples: usize,
    over_cutoff: usize,
    skipped: usize,
}

pub fn build_sft_data(ctx: &Context<'_>) -> Result<Outcome, CliError> {
    let name = "build-sft-data";
    let cfg = ctx.cfg;
    let stage = Staging::new(&cfg.out.join(name))?;
    let mut degraded = Vec::new();
    let mut summary = BTreeMap::new();
    for ds in require_datasets(cfg)? {
        let store = load_corpus(ds)?;
        let docs = match cfg.selflearn.sample_docs {
            Some(n) => corpus::sample_documents(&store, n, derive_seed(cfg.seed, &["sample", &ds.name]))?,
            None => store.documents().to_vec(),
        };
        let (cache, _) = ctx.corpus_embeddings(ds, &store)?;
        let index = DenseIndex::new(cache);
        let mut gcfg = cfg.selflearn.generator.clone();
        gcfg.seed = cfg.seed;
        gcfg.template = ds.template();
        let out = build_generator_dataset(&docs, &ctx.generator, &ctx.embedder, &index, &gcfg)?;
        emit_sft_jsonl(&out.examples, stage.join(format!("{}.sft.jsonl", ds.name)))?;
        write_jsonl(stage.join(format!("{}.records.jsonl", ds.name)), &out.records)?;
        write_jsonl(stage.join(format!("{}.skipped.jsonl", ds.name)), &out.skipped)?;
        for s in &out.skipped {
            degraded.push(format!("{}/{}: {}", ds.name, s.id, s.reason));
        }
        summary.insert(
            ds.name.clone(),
            SftSummary {
                documents: docs.len(),
                examples: out.examples.len(),
                over_cutoff: out.over_cutoff.len(),
                skipped: out.skipped.len(),
            },
        );
    }
    write_json(&stage.join("summary.json"), &summary)?;
    ctx.finish(name, stage, degraded)
}

#[derive(Serialize)]
struct TrainingHints {
    temperature: f64,
    negatives: usize,
    triplets: BTreeMap<String, usize>,
}

pub fn build_retriever_data(ctx: &Context<'_>) -> Result<Outcome, CliError> {
    let name = "build-retriever-data";
    let cfg = ctx.cfg;
    let sft_dir = cfg
        .selflearn
        .sft_dir
        .clone()
        .unwrap_or_else(|| cfg.out.join("build-sft-data"));
    let stage = Staging::new(&cfg.out.join(name))?;
    let mut degraded = Vec::new();
    let mut counts = BTreeMap::new();
    for ds in require_datasets(cfg)? {
        let sft_path = sft_dir.join(format!("{}.sft.jsonl", ds.name));
        if !sft_path.exists() {
            return Err(CliError::Validation(format!(
                "{}: missing; run build-sft-data first or set selflearn.sft_dir",
                sft_path.display()
            )));
        }
        let sft = read_sft_jsonl(&sft_path)?;
        let store = load_corpus(ds)?;
        let (cache, _) = ctx.corpus_embeddings(ds, &store)?;
        let index = mining_index(cache, AnnParams::default());
        let mut rcfg = cfg.selflearn.retriever.clone();
        rcfg.seed = cfg.seed;
        rcfg.template = ds.template();
        let out = build_retriever_dataset(&sft, &ctx.generator, &ctx.embedder, index.as_ref(), &rcfg)?;
        emit_triplets_jsonl(&out.triplets, stage.join(format!("{}.triplets.jsonl", ds.name)))?;
        write_jsonl(stage.join(format!("{}.skipped.jsonl", ds.name)), &out.skipped)?;
        for s in &out.skipped {
            degraded.push(format!("{}/{}: {}", ds.name, s.id, s.reason));
        }
        counts.insert(ds.name.clone(), out.triplets.len());
    }
    write_json(
        &stage.join("training.json"),
        &TrainingHints {
            temperature: cfg.selflearn.temperature,
            negatives: cfg.selflearn.retriever.negatives,
            triplets: counts,
        },
    )?;
    ctx.finish(name, stage, degraded)
}

fn read_bench_queries(path: &Path) -> Result<Vec<BenchQuery>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::Validation(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn read_pairs(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if line.trim().is_empty() || (i == 0 && cols.first() == Some(&"query-id")) {
            continue;
        }
        match cols.as_slice() {
            [q, d, ..] if !q.is_empty() && !d.is_empty() => out.push((q.to_string(), d.to_string())),
            _ => {
                return Err(CliError::Validation(format!(
                    "{} line {}: expected query-id<TAB>doc-id",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

pub fn construct_benchmark(ctx: &Context<'_>) -> Result<Outcome, CliError> {
    let name = "construct-benchmark";
    let cfg = ctx.cfg;
    let b = &cfg.benchmark;
    let (Some(docs_path), Some(queries_path)) = (&b.documents, &b.queries) else {
        return Err(CliError::Validation("benchmark.documents and benchmark.queries are required".into()));
    };
    let mut pipeline = b.pipeline.clone();
    pipeline.seed = cfg.seed;
    pipeline.thresholds()?;
    let input = PipelineInput {
        documents: corpus::load_corpus(docs_path)?.into_documents(),
        queries: read_bench_queries(queries_path)?,
        pairs: b.pairs.as_deref().map(read_pairs).transpose()?,
    };
    let stage = Staging::new(&cfg.out.join(name))?;
    let out = benchkit::run_pipeline(&input, &ctx.judge(), &pipeline, stage.path())?;
    let degraded = if out.report.flagged { out.report.warnings.clone() } else { Vec::new() };
    ctx.finish(name, stage, degraded)
}
