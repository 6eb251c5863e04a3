use std::hash::Hasher;
use std::sync::atomic::{AtomicUsize, Ordering};

use fnv::FnvHasher;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CompletionBackend, CompletionRequest, TransportError};

/// Noise applied by the hashing paraphraser.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParaphraseConfig {
    pub drop_rate: f64,
    pub noise_rate: f64,
    pub swap_rate: f64,
}

impl Default for ParaphraseConfig {
    fn default() -> Self {
        ParaphraseConfig {
            drop_rate: 0.15,
            noise_rate: 0.10,
            swap_rate: 0.10,
        }
    }
}

#[derive(Debug, Clone)]
struct Rule {
    all_of: Vec<String>,
    responses: Vec<String>,
}

#[derive(Debug, Clone)]
enum Fallback {
    Paraphrase(ParaphraseConfig),
    Fixed(String),
    Unreachable,
}

/// Offline generator. Scripted rules are tried first (a rule matches when the
/// prompt contains every one of its substrings; sample `i` gets response
/// `i % len`). Unmatched prompts fall through to the hashing paraphraser,
/// a fixed response, or a simulated transport failure.
///
/// Output is a pure function of `(prompt, seed, sample index)`.
#[derive(Debug)]
pub struct MockGenerator {
    rules: Vec<Rule>,
    knowledge: Vec<(String, String)>,
    fallback: Fallback,
    calls: AtomicUsize,
}

#[derive(Debug, Clone)]
pub struct MockGeneratorBuilder {
    rules: Vec<Rule>,
    knowledge: Vec<(String, String)>,
    fallback: Fallback,
}

impl MockGeneratorBuilder {
    pub fn when(mut self, all_of: &[&str], responses: &[&str]) -> Self {
        assert!(!responses.is_empty(), "a scripted rule needs at least one response");
        self.rules.push(Rule {
            all_of: all_of.iter().map(|s| s.to_string()).collect(),
            responses: responses.iter().map(|s| s.to_string()).collect(),
        });
        self
    }

    pub fn always(mut self, response: &str) -> Self {
        self.fallback = Fallback::Fixed(response.to_string());
        self
    }

    pub fn unreachable(mut self) -> Self {
        self.fallback = Fallback::Unreachable;
        self
    }

    pub fn paraphrase(mut self, cfg: ParaphraseConfig) -> Self {
        self.fallback = Fallback::Paraphrase(cfg);
        self
    }

    /// When a prompt contains `key`, the paraphraser rewrites `source`
    /// instead of a section of the prompt.
    pub fn knowledge(mut self, key: impl Into<String>, source: impl Into<String>) -> Self {
        self.knowledge.push((key.into(), source.into()));
        self
    }

    pub fn build(self) -> MockGenerator {
        MockGenerator {
            rules: self.rules,
            knowledge: self.knowledge,
            fallback: self.fallback,
            calls: AtomicUsize::new(0),
        }
    }
}

const SECTION_LABELS: &[&str] = &["Document:", "Passage:", "Text:", "Title:", "Question:", "Query:"];

fn is_label_line(line: &str) -> bool {
    let line = line.trim_end();
    let Some(head) = line.strip_suffix(':') else {
        return false;
    };
    let mut chars = head.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_uppercase())
        && head.len() <= 32
        && chars.all(|c| c.is_ascii_alphabetic() || c == ' ' || c == '-')
}

/// The prompt section the paraphraser rewrites: the content after the
/// highest-priority line label, up to the next bare label line.
fn prompt_section(prompt: &str) -> &str {
    for label in SECTION_LABELS {
        let start = if prompt.starts_with(label) {
            Some(0)
        } else {
            prompt.rfind(&format!("\n{label}")).map(|p| p + 1)
        };
        if let Some(start) = start {
            let body = &prompt[start + label.len()..];
            let mut end = body.len();
            let mut offset = 0;
            for line in body.split_inclusive('\n') {
                if offset > 0 && is_label_line(line) {
                    end = offset;
                    break;
                }
                offset += line.len();
            }
            let section = body[..end].trim();
            if !section.is_empty() {
                return section;
            }
        }
    }
    prompt.trim()
}

fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut h = FnvHasher::default();
    for p in parts {
        h.write(&(p.len() as u64).to_le_bytes());
        h.write(p);
    }
    h.finish()
}

/// Deterministic noisy rewrite of `source`: a window of at most
/// `max_tokens` tokens with random drops, substitutions, and adjacent swaps.
/// Text without whitespace is treated per character. The result never
/// equals the (windowed) source.
pub fn paraphrase(source: &str, cfg: &ParaphraseConfig, max_tokens: usize, seed: u64) -> String {
    let words: Vec<&str> = source.split_whitespace().collect();
    let char_mode = words.len() <= 1 && source.chars().count() > 8;
    let chars: Vec<String>;
    let (tokens, joiner): (Vec<&str>, &str) = if char_mode {
        chars = source.trim().chars().map(String::from).collect();
        (chars.iter().map(String::as_str).collect(), "")
    } else {
        (words, " ")
    };
    if tokens.is_empty() {
        return String::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_tokens = max_tokens.max(1);
    let start = if tokens.len() > max_tokens {
        rng.random_range(0..=tokens.len() - max_tokens)
    } else {
        0
    };
    let window = &tokens[start..(start + max_tokens).min(tokens.len())];

    let mut out: Vec<String> = Vec::with_capacity(window.len());
    for tok in window {
        let r: f64 = rng.random();
        if r < cfg.drop_rate {
            continue;
        }
        if r < cfg.drop_rate + cfg.noise_rate {
            out.push(format!("zq{:x}", rng.random::<u32>() % 0xfffff));
        } else {
            out.push(tok.to_string());
        }
    }
    let mut i = 0;
    while i + 1 < out.len() {
        if rng.random::<f64>() < cfg.swap_rate {
            out.swap(i, i + 1);
            i += 2;
        } else {
            i += 1;
        }
    }
    if out.is_empty() {
        out.push(window[0].to_string());
    }
    let identical = out.len() == window.len() && out.iter().zip(window).all(|(a, b)| a == b);
    if identical {
        if out.len() > 1 {
            out.pop();
        } else {
            out.push(format!("zq{:x}", rng.random::<u32>() % 0xfffff));
        }
    }
    out.join(joiner)
}

impl MockGenerator {
    pub fn builder() -> MockGeneratorBuilder {
        MockGeneratorBuilder {
            rules: Vec::new(),
            knowledge: Vec::new(),
            fallback: Fallback::Paraphrase(ParaphraseConfig::default()),
        }
    }

    /// Paraphraser with default noise and no scripts.
    pub fn paraphraser() -> Self {
        Self::builder().build()
    }

    /// Number of `complete` calls served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn sample(&self, prompt: &str, req: &CompletionRequest<'_>, index: usize) -> Option<String> {
        if let Some(rule) = self
            .rules
            .iter()
            .find(|r| r.all_of.iter().all(|s| prompt.contains(s.as_str())))
        {
            return Some(rule.responses[index % rule.responses.len()].clone());
        }
        match &self.fallback {
            Fallback::Unreachable => None,
            Fallback::Fixed(s) => Some(s.clone()),
            Fallback::Paraphrase(cfg) => {
                let source = self
                    .knowledge
                    .iter()
                    .find(|(k, _)| prompt.contains(k.as_str()))
                    .map(|(_, s)| s.as_str())
                    .unwrap_or_else(|| prompt_section(prompt));
                let seed = stable_hash(&[
                    prompt.as_bytes(),
                    &req.seed.unwrap_or(0).to_le_bytes(),
                    &(index as u64).to_le_bytes(),
                ]);
                Some(paraphrase(source, cfg, req.max_output_tokens as usize, seed))
            }
        }
    }
}

impl CompletionBackend for MockGenerator {
    fn complete(&self, req: &CompletionRequest<'_>) -> Result<Vec<String>, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (req.first_index..req.first_index + req.n)
            .map(|i| {
                self.sample(req.prompt, req, i)
                    .ok_or_else(|| TransportError("mock endpoint unreachable".into()))
            })
            .collect()
    }

    fn describe(&self) -> String {
        "mock".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn section_prefers_document() {
        let p = "Intro text.\nQuestion: what\nDocument: the body\nmore body\nParagraph:";
        assert_eq!(prompt_section(p), "the body\nmore body");
        assert_eq!(prompt_section("Question: q here\nParagraph:"), "q here");
        assert_eq!(prompt_section("no labels"), "no labels");
    }

    #[test]
    fn paraphrase_is_deterministic_and_differs() {
        let src = "alpha beta gamma delta epsilon zeta eta theta iota kappa";
        let cfg = ParaphraseConfig::default();
        for seed in 0..200 {
            let a = paraphrase(src, &cfg, 512, seed);
            assert_eq!(a, paraphrase(src, &cfg, 512, seed));
            assert_ne!(a, src);
            assert!(!a.is_empty());
        }
        let none = ParaphraseConfig {
            drop_rate: 0.0,
            noise_rate: 0.0,
            swap_rate: 0.0,
        };
        assert_ne!(paraphrase("one", &none, 512, 1), "one");
    }

    #[test]
    fn paraphrase_window_respects_budget() {
        let src: Vec<String> = (0..100).map(|i| format!("t{i}")).collect();
        let out = paraphrase(&src.join(" "), &ParaphraseConfig::default(), 10, 3);
        assert!(out.split_whitespace().count() <= 10);
    }

    #[test]
    fn paraphrase_handles_unsegmented_text() {
        let src = "腹股沟疝可以使用疝气带进行保守治疗";
        let out = paraphrase(src, &ParaphraseConfig::default(), 512, 11);
        assert!(!out.contains(' '));
        assert_ne!(out, src);
    }

    #[test]
    fn knowledge_overrides_section() {
        let mock = MockGenerator::builder()
            .paraphrase(ParaphraseConfig {
                drop_rate: 0.0,
                noise_rate: 0.0,
                swap_rate: 0.0,
            })
            .knowledge("hernia", "mesh repair is standard for adults")
            .build();
        let req = CompletionRequest {
            prompt: "Question: hernia?\nParagraph:",
            temperature: 0.7,
            max_output_tokens: 512,
            seed: None,
            first_index: 0,
            n: 1,
        };
        let out = mock.complete(&req).unwrap();
        assert!(out[0].starts_with("mesh repair"));
    }
}
