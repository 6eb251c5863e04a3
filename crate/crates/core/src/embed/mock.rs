use std::hash::Hasher;
use std::sync::atomic::{AtomicUsize, Ordering};

use fnv::FnvHasher;

use super::{EmbedError, EmbeddingBackend};

/// Signed feature hashing of character trigrams into `dim` buckets.
///
/// Input is wrapped in boundary markers, so one- and two-character texts
/// still produce at least one trigram.
#[derive(Debug)]
pub struct HashingEmbedder {
    dim: usize,
    texts_embedded: AtomicUsize,
    batches: AtomicUsize,
}

pub const DEFAULT_MOCK_DIM: usize = 256;

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashingEmbedder {
            dim,
            texts_embedded: AtomicUsize::new(0),
            batches: AtomicUsize::new(0),
        }
    }

    /// Total texts embedded so far.
    pub fn texts_embedded(&self) -> usize {
        self.texts_embedded.load(Ordering::SeqCst)
    }

    pub fn batches(&self) -> usize {
        self.batches.load(Ordering::SeqCst)
    }

    pub fn embed_raw(&self, text: &str) -> Vec<f32> {
        let chars: Vec<char> = std::iter::once('\u{2}')
            .chain(text.chars())
            .chain(std::iter::once('\u{3}'))
            .collect();
        let mut v = vec![0f32; self.dim];
        let mut buf = [0u8; 12];
        for w in chars.windows(3) {
            let mut len = 0;
            for c in w {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            let mut h = FnvHasher::default();
            h.write(&buf[..len]);
            let hash = h.finish();
            let bucket = (hash % self.dim as u64) as usize;
            let sign = if (hash >> 63) == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        if v.iter().all(|&x| x == 0.0) {
            // every trigram cancelled out
            let mut h = FnvHasher::default();
            h.write(text.as_bytes());
            v[(h.finish() % self.dim as u64) as usize] = 1.0;
        }
        v
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_MOCK_DIM)
    }
}

impl EmbeddingBackend for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        self.batches.fetch_add(1, Ordering::SeqCst);
        self.texts_embedded.fetch_add(texts.len(), Ordering::SeqCst);
        Ok(texts.iter().map(|t| self.embed_raw(t)).collect())
    }

    fn describe(&self) -> String {
        format!("hashing-trigram mock (dim {})", self.dim)
    }
}
