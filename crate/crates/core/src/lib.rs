//! Retrieval with hypothetical documents: dense, approximate and lexical
//! search, query fusion, label-free training data for the generator and the
//! retriever, IR metrics, and a judged-benchmark construction pipeline.
//!
//! Model access goes through [`textgen::GeneratorClient`] and
//! [`embed::EmbedderClient`], each backed by an HTTP endpoint or an offline
//! deterministic mock.

pub mod benchkit;
pub mod corpus;
pub mod embed;
pub mod hyde;
pub mod metrics;
pub mod retrieval;
pub mod selflearn;
mod http;
pub mod textgen;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/search.md")]
    mod search {}
    #[doc = include_str!("../../../book/src/hyde.md")]
    mod hyde {}
    #[doc = include_str!("../../../book/src/selflearn.md")]
    mod selflearn {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/benchmark.md")]
    mod benchmark {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
