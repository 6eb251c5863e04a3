//! Generator clients: prompt rendering, sampling, retries, and the
//! deterministic mock used for offline runs.

mod mock;
pub mod prompt;
mod remote;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;

pub use mock::{paraphrase, MockGenerator, MockGeneratorBuilder, ParaphraseConfig};
pub use prompt::{render_prompt, PromptLibrary, PromptTemplate, TemplateOrigin};
pub use remote::{chat_request_body, parse_chat_response, ChatCompletionsBackend};

#[derive(Debug, thiserror::Error)]
pub enum TextgenError {
    #[error("missing template slot `{0}`")]
    MissingSlot(String),
    #[error("unknown prompt template `{0}`")]
    UnknownTemplate(String),
    #[error("template {name}: {message}")]
    Template { name: String, message: String },
    #[error("generation failed after {attempts} attempts: {last}")]
    Transport { attempts: usize, last: String },
    #[error("generator returned {received} usable completions, {requested} requested")]
    DegenerateOutput { requested: usize, received: usize },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// Failure reported by a backend for one request.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{0}")]
pub struct TransportError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub seed: Option<u64>,
    pub num_samples: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            temperature: 0.7,
            max_output_tokens: 512,
            seed: None,
            num_samples: 1,
        }
    }
}

impl SamplingConfig {
    pub fn with_samples(&self, n: usize) -> Self {
        SamplingConfig {
            num_samples: n,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SamplingConfig {
            seed: Some(seed),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: usize,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 2,
            backoff_ms: 500,
        }
    }
}

/// One completion request as seen by a backend.
#[derive(Debug, Clone)]
pub struct CompletionRequest<'a> {
    pub prompt: &'a str,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub seed: Option<u64>,
    /// Index of the first sample requested; retries continue the sequence.
    pub first_index: usize,
    pub n: usize,
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Vec<String>, TransportError>;

    fn describe(&self) -> String;
}

/// A generator model behind a backend, plus the templates it is prompted with.
#[derive(Clone)]
pub struct GeneratorClient {
    backend: Arc<dyn CompletionBackend>,
    pub model: String,
    pub retry: RetryPolicy,
    prompts: Arc<PromptLibrary>,
}

impl std::fmt::Debug for GeneratorClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GeneratorClient")
            .field("backend", &self.backend.describe())
            .field("model", &self.model)
            .field("retry", &self.retry)
            .finish()
    }
}

const ROLE_PREFIXES: &[&str] = &[
    "<|im_start|>assistant",
    "<|assistant|>",
    "assistant:",
    "Assistant:",
    "ASSISTANT:",
    "[ASSISTANT]",
];
const END_MARKERS: &[&str] = &["<|im_end|>", "<|eot_id|>", "<|endoftext|>", "</s>"];

/// Trims whitespace and chat-template artifacts from a completion.
pub fn clean_completion(raw: &str) -> String {
    let mut s = raw.trim();
    loop {
        let before = s;
        for p in ROLE_PREFIXES {
            if let Some(rest) = s.strip_prefix(p) {
                s = rest.trim_start();
            }
        }
        for m in END_MARKERS {
            if let Some(rest) = s.strip_suffix(m) {
                s = rest.trim_end();
            }
        }
        if s == before {
            break;
        }
    }
    s.to_string()
}

impl GeneratorClient {
    pub fn new(backend: Arc<dyn CompletionBackend>, model: impl Into<String>) -> Self {
        GeneratorClient {
            backend,
            model: model.into(),
            retry: RetryPolicy::default(),
            prompts: Arc::new(PromptLibrary::builtin()),
        }
    }

    pub fn mock(mock: MockGenerator) -> Self {
        let mut c = Self::new(Arc::new(mock), "mock");
        c.retry.backoff_ms = 0;
        c
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_prompts(mut self, prompts: PromptLibrary) -> Self {
        self.prompts = Arc::new(prompts);
        self
    }

    pub fn prompts(&self) -> &PromptLibrary {
        &self.prompts
    }

    pub fn describe(&self) -> String {
        format!("{} ({})", self.model, self.backend.describe())
    }

    /// Requests `cfg.num_samples` completions. Empty completions are
    /// discarded and re-requested within the retry budget.
    pub fn generate(&self, prompt: &str, cfg: &SamplingConfig) -> Result<Vec<String>, TextgenError> {
        let wanted = cfg.num_samples;
        if wanted == 0 {
            return Ok(Vec::new());
        }
        let attempts = self.retry.max_retries + 1;
        let mut out = Vec::with_capacity(wanted);
        let mut next_index = 0;
        let mut last_error = None;
        for attempt in 0..attempts {
            if attempt > 0 && self.retry.backoff_ms > 0 {
                let factor = 1u64 << (attempt - 1).min(16);
                std::thread::sleep(Duration::from_millis(self.retry.backoff_ms * factor));
            }
            let request = CompletionRequest {
                prompt,
                temperature: cfg.temperature,
                max_output_tokens: cfg.max_output_tokens,
                seed: cfg.seed,
                first_index: next_index,
                n: wanted - out.len(),
            };
            match self.backend.complete(&request) {
                Ok(texts) => {
                    next_index += request.n;
                    last_error = None;
                    out.extend(
                        texts
                            .iter()
                            .map(|t| clean_completion(t))
                            .filter(|t| !t.is_empty()),
                    );
                    if out.len() >= wanted {
                        out.truncate(wanted);
                        return Ok(out);
                    }
                }
                Err(e) => {
                    log::debug!("generation attempt {} failed: {e}", attempt + 1);
                    last_error = Some(e);
                }
            }
        }
        match last_error {
            Some(e) if out.is_empty() => Err(TextgenError::Transport {
                attempts,
                last: e.0,
            }),
            _ => Err(TextgenError::DegenerateOutput {
                requested: wanted,
                received: out.len(),
            }),
        }
    }
}

/// Synthesizes one search query answered by `doc`.
pub fn generate_query_for_doc(
    client: &GeneratorClient,
    doc: &Document,
    cfg: &SamplingConfig,
) -> Result<String, TextgenError> {
    if doc.text.trim().is_empty() {
        return Err(TextgenError::Precondition(format!(
            "document `{}` has empty text",
            doc.id
        )));
    }
    let text = doc.indexed_text();
    let prompt = client
        .prompts()
        .render(prompt::QUERY_GEN, &[("DOCUMENT", text.as_str())])?;
    let mut out = client.generate(&prompt, &cfg.with_samples(1))?;
    Ok(out.remove(0))
}

/// Generates `count` candidate pseudo-documents for `query`, conditioning
/// the generator on the target document.
pub fn generate_pseudo_docs(
    client: &GeneratorClient,
    query: &str,
    target: &Document,
    count: usize,
    cfg: &SamplingConfig,
) -> Result<Vec<String>, TextgenError> {
    if count == 0 {
        return Err(TextgenError::Precondition(
            "candidate count must be at least 1".into(),
        ));
    }
    let text = target.indexed_text();
    let prompt = client.prompts().render(
        prompt::PSEUDO_GEN,
        &[("QUESTION", query), ("DOCUMENT", text.as_str())],
    )?;
    client.generate(&prompt, &cfg.with_samples(count))
}

/// Inference-time prompt family, chosen per dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "UPPERCASE")]
pub enum HypoTemplate {
    /// Question to passage.
    #[default]
    Q2P,
    /// Title to passage.
    T2P,
    /// Passage to similar passage.
    P2P,
}

impl HypoTemplate {
    pub fn template_name(self) -> &'static str {
        match self {
            HypoTemplate::Q2P => prompt::Q2P,
            HypoTemplate::T2P => prompt::T2P,
            HypoTemplate::P2P => prompt::P2P,
        }
    }

    pub fn slot(self) -> &'static str {
        match self {
            HypoTemplate::Q2P => "QUESTION",
            HypoTemplate::T2P => "TITLE",
            HypoTemplate::P2P => "TEXT",
        }
    }

    /// Default template for a benchmark dataset: title-style post and
    /// citation sets use T2P, the similar-paper set uses P2P, all others Q2P.
    pub fn for_dataset(name: &str) -> Self {
        match name.to_ascii_lowercase().as_str() {
            "iiyipost" | "cslcite" => HypoTemplate::T2P,
            "cslrel" => HypoTemplate::P2P,
            _ => HypoTemplate::Q2P,
        }
    }
}

impl std::str::FromStr for HypoTemplate {
    type Err = TextgenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "Q2P" => Ok(HypoTemplate::Q2P),
            "T2P" => Ok(HypoTemplate::T2P),
            "P2P" => Ok(HypoTemplate::P2P),
            _ => Err(TextgenError::UnknownTemplate(s.to_string())),
        }
    }
}

/// Rewrites `query` into `count` hypothetical documents. `count == 0`
/// yields no documents and makes no request.
pub fn generate_hypothetical(
    client: &GeneratorClient,
    query: &str,
    template: HypoTemplate,
    count: usize,
    cfg: &SamplingConfig,
) -> Result<Vec<String>, TextgenError> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let prompt = client
        .prompts()
        .render(template.template_name(), &[(template.slot(), query)])?;
    client.generate(&prompt, &cfg.with_samples(count))
}
