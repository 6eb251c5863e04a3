//! Command-line pipelines over the `slhyde` library.
//!
//! Every command reads a [`RunConfig`], writes its outputs into
//! `<out>/<command>/` through a staging directory, and records the resolved
//! configuration and a manifest of prompt-template and output hashes.

pub mod commands;
pub mod config;
pub mod output;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{ClientMode, Overrides, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_DEGRADED: i32 = 3;

macro_rules! classify {
    ($ty:ty, |$e:ident| $validation:expr) => {
        impl From<$ty> for CliError {
            fn from($e: $ty) -> Self {
                if $validation {
                    CliError::Validation($e.to_string())
                } else {
                    CliError::Runtime($e.to_string())
                }
            }
        }
    };
}

use slhyde::{benchkit, corpus, embed, hyde, metrics, retrieval, selflearn, textgen};

classify!(corpus::CorpusError, |_e| true);
classify!(embed::EmbedError, |e| matches!(
    e,
    embed::EmbedError::EmptyBatch | embed::EmbedError::EmptyText(_) | embed::EmbedError::DimMismatch { .. }
));
classify!(textgen::TextgenError, |e| matches!(
    e,
    textgen::TextgenError::MissingSlot(_)
        | textgen::TextgenError::UnknownTemplate(_)
        | textgen::TextgenError::Template { .. }
        | textgen::TextgenError::Precondition(_)
));
classify!(retrieval::RetrievalError, |e| matches!(
    e,
    retrieval::RetrievalError::ZeroK | retrieval::RetrievalError::DimMismatch { .. }
));
classify!(hyde::HydeError, |e| matches!(e, hyde::HydeError::Config(_)));
classify!(selflearn::SelflearnError, |e| matches!(
    e,
    selflearn::SelflearnError::Config(_)
        | selflearn::SelflearnError::CorpusTooSmall { .. }
        | selflearn::SelflearnError::Parse { .. }
));
classify!(metrics::MetricsError, |e| !matches!(e, metrics::MetricsError::Io { .. }));
classify!(benchkit::BenchError, |e| matches!(
    e,
    benchkit::BenchError::Config(_) | benchkit::BenchError::Corpus(_)
));

#[derive(Debug, Clone, Default, Args)]
pub struct SharedArgs {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory; each command writes into a subdirectory of it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub clients: Option<ClientMode>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Embed every dataset corpus into the run's cache.
    EmbedCorpus,
    /// Dense search with the plain query embedding.
    Search {
        #[arg(long)]
        k: Option<usize>,
    },
    /// Search with hypothetical documents fused into the query.
    HydeSearch {
        #[arg(long)]
        k: Option<usize>,
        /// Hypothetical documents per query; 0 is plain search.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Score runs against the qrels, repeated over seeds.
    Evaluate {
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Build generator fine-tuning examples from the corpora.
    BuildSftData,
    /// Build retriever triplets with mined hard negatives.
    BuildRetrieverData,
    /// Filter, match and verify raw texts into a benchmark dataset.
    ConstructBenchmark,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::EmbedCorpus => "embed-corpus",
            Command::Search { .. } => "search",
            Command::HydeSearch { .. } => "hyde-search",
            Command::Evaluate { .. } => "evaluate",
            Command::BuildSftData => "build-sft-data",
            Command::BuildRetrieverData => "build-retriever-data",
            Command::ConstructBenchmark => "construct-benchmark",
        }
    }
}

#[derive(Debug, Clone, Parser)]
#[command(name = "slhyde", version, about = "Hypothetical-document retrieval pipelines")]
pub struct Cli {
    #[command(flatten)]
    pub shared: SharedArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// A finished command.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub dir: PathBuf,
    /// Fallbacks taken; a non-empty list means exit status 3.
    pub degraded: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.degraded.is_empty() {
            EXIT_OK
        } else {
            EXIT_DEGRADED
        }
    }
}

pub fn resolve_config(shared: &SharedArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &shared.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: shared.seed,
        out: shared.out.clone(),
        clients: shared.clients,
        parallelism: shared.parallelism,
    });
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let mut cfg = resolve_config(&cli.shared)?;
    match &cli.command {
        Command::Search { k } | Command::HydeSearch { k, .. } => {
            if let Some(k) = k {
                cfg.retrieval.k = *k;
            }
        }
        Command::Evaluate { repeats: Some(r) } => cfg.eval.repeats = *r,
        _ => {}
    }
    if let Command::HydeSearch { n: Some(n), .. } = &cli.command {
        cfg.fusion.n = *n;
    }
    cfg.validate()?;
    let go = || commands::dispatch(&cli.command, &cfg);
    match cfg.parallelism {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?
            .install(go),
        None => go(),
    }
}
