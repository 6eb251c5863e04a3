//! Binary embedding cache.
//!
//! Layout (little-endian): magic `SLHE1`, `u32` dim, `u64` count, then
//! `count * dim` `f32` values row-major. Ids live in a sidecar text file
//! (`<path>.ids`, one id per line, same order).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{EmbedError, EmbedderClient, EmbeddingVector};
use crate::corpus::CorpusStore;

pub const CACHE_MAGIC: &[u8; 5] = b"SLHE1";
const HEADER_LEN: usize = 5 + 4 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCache {
    ids: Vec<String>,
    matrix: Vec<f32>,
    dim: usize,
    index: HashMap<String, usize>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EmbedError + '_ {
    move |source| EmbedError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn ids_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

impl EmbeddingCache {
    pub fn new(ids: Vec<String>, matrix: Vec<f32>, dim: usize) -> Result<Self, EmbedError> {
        if dim == 0 {
            return Err(EmbedError::Validation("dimension must be positive".into()));
        }
        if matrix.len() != ids.len() * dim {
            return Err(EmbedError::Validation(format!(
                "{} values for {} ids of dim {dim}",
                matrix.len(),
                ids.len()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if id.is_empty() || id.contains('\n') || id.contains('\r') {
                return Err(EmbedError::Validation(format!("invalid id {id:?}")));
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(EmbedError::Validation(format!("duplicate id `{id}`")));
            }
        }
        Ok(EmbeddingCache {
            ids,
            matrix,
            dim,
            index,
        })
    }

    pub fn from_vectors(ids: Vec<String>, vectors: &[EmbeddingVector]) -> Result<Self, EmbedError> {
        let dim = vectors.first().map_or(0, EmbeddingVector::dim);
        let mut matrix = Vec::with_capacity(dim * vectors.len());
        for v in vectors {
            if v.dim() != dim {
                return Err(EmbedError::DimMismatch {
                    expected: dim,
                    found: v.dim(),
                });
            }
            matrix.extend_from_slice(v.values());
        }
        if ids.len() != vectors.len() {
            return Err(EmbedError::Validation(format!(
                "{} ids for {} vectors",
                ids.len(),
                vectors.len()
            )));
        }
        Self::new(ids, matrix, dim.max(1))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, row: usize) -> &str {
        &self.ids[row]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.matrix[row * self.dim..(row + 1) * self.dim]
    }

    pub fn vector(&self, row: usize) -> EmbeddingVector {
        EmbeddingVector {
            values: self.row(row).to_vec(),
        }
    }

    pub fn vector_for(&self, id: &str) -> Option<EmbeddingVector> {
        self.position(id).map(|r| self.vector(r))
    }

    pub fn matrix(&self) -> &[f32] {
        &self.matrix
    }

    /// Writes the matrix and its id sidecar, each via rename-into-place.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), EmbedError> {
        let path = path.as_ref();
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;

        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
        {
            let mut w = BufWriter::new(tmp.as_file_mut());
            w.write_all(CACHE_MAGIC).map_err(io_err(path))?;
            w.write_all(&(self.dim as u32).to_le_bytes()).map_err(io_err(path))?;
            w.write_all(&(self.ids.len() as u64).to_le_bytes()).map_err(io_err(path))?;
            for v in &self.matrix {
                w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
            }
            w.flush().map_err(io_err(path))?;
        }
        let ids_file = ids_path(path);
        let mut tmp_ids = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
        {
            let mut w = BufWriter::new(tmp_ids.as_file_mut());
            for id in &self.ids {
                writeln!(w, "{id}").map_err(io_err(&ids_file))?;
            }
            w.flush().map_err(io_err(&ids_file))?;
        }
        tmp_ids
            .persist(&ids_file)
            .map_err(|e| io_err(&ids_file)(e.error))?;
        tmp.persist(path).map_err(|e| io_err(path)(e.error))?;
        Ok(())
    }
}

pub fn load_cache(path: impl AsRef<Path>) -> Result<EmbeddingCache, EmbedError> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    if bytes.len() < HEADER_LEN {
        return Err(EmbedError::Format(format!(
            "file is {} bytes, shorter than the header",
            bytes.len()
        )));
    }
    if &bytes[..5] != CACHE_MAGIC {
        return Err(EmbedError::Format("bad magic bytes".into()));
    }
    let dim = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[9..17].try_into().unwrap()) as usize;
    let expected = count
        .checked_mul(dim)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(HEADER_LEN))
        .ok_or_else(|| EmbedError::Format("header sizes overflow".into()))?;
    if bytes.len() != expected {
        return Err(EmbedError::Format(format!(
            "expected {expected} bytes for {count} x {dim}, found {}",
            bytes.len()
        )));
    }
    let matrix: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let ids_file = ids_path(path);
    let reader = BufReader::new(File::open(&ids_file).map_err(io_err(&ids_file))?);
    let ids: Vec<String> = reader
        .lines()
        .collect::<Result<_, _>>()
        .map_err(io_err(&ids_file))?;
    if ids.len() != count {
        return Err(EmbedError::Format(format!(
            "id sidecar has {} lines, header says {count}",
            ids.len()
        )));
    }
    EmbeddingCache::new(ids, matrix, dim)
}

/// Loads a cache and checks it was produced at the client's dimension.
pub fn load_cache_for(path: impl AsRef<Path>, client: &EmbedderClient) -> Result<EmbeddingCache, EmbedError> {
    let cache = load_cache(path)?;
    if cache.dim() != client.dim() {
        return Err(EmbedError::Validation(format!(
            "cache dim {} does not match embedder dim {}",
            cache.dim(),
            client.dim()
        )));
    }
    Ok(cache)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    /// An existing cache matched the corpus and was reused.
    Reused,
    Built,
    /// An existing cache was unreadable or stale and was rebuilt.
    Rebuilt,
}

/// Returns the corpus embeddings at `path`, embedding and writing them only
/// when no matching cache exists.
pub fn cache_embeddings(
    client: &EmbedderClient,
    store: &CorpusStore,
    path: impl AsRef<Path>,
) -> Result<(EmbeddingCache, CacheStatus), EmbedError> {
    let path = path.as_ref();
    let mut status = CacheStatus::Built;
    if path.exists() {
        match load_cache_for(path, client) {
            Ok(cache) if cache.ids().iter().map(String::as_str).eq(store.ids()) => {
                return Ok((cache, CacheStatus::Reused));
            }
            Ok(_) => {
                log::warn!("{}: cache ids do not match the corpus, rebuilding", path.display());
                status = CacheStatus::Rebuilt;
            }
            Err(e) => {
                log::warn!("{}: unusable cache ({e}), rebuilding", path.display());
                status = CacheStatus::Rebuilt;
            }
        }
    }
    let cache = if store.is_empty() {
        EmbeddingCache::new(Vec::new(), Vec::new(), client.dim())?
    } else {
        let texts: Vec<String> = store.documents().iter().map(|d| d.indexed_text()).collect();
        let vectors = client.embed_texts(&texts)?;
        EmbeddingCache::from_vectors(store.ids().map(String::from).collect(), &vectors)?
    };
    cache.write(path)?;
    Ok((cache, status))
}

#[cfg(test)]
mod tests {
    use super::super::HashingEmbedder;
    use super::*;
    use crate::corpus::Document;
    use std::sync::Arc;

    fn store(n: usize) -> CorpusStore {
        CorpusStore::from_documents(
            (0..n)
                .map(|i| Document::new(format!("d{i}"), format!("document number {i} about topic {}", i % 3)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.slhe");
        let client = EmbedderClient::mock(48);
        let (cache, status) = cache_embeddings(&client, &store(10), &path).unwrap();
        assert_eq!(status, CacheStatus::Built);
        let back = load_cache(&path).unwrap();
        assert_eq!(back.ids(), cache.ids());
        let a: Vec<u32> = cache.matrix().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.matrix().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.slhe");
        let cache = EmbeddingCache::new(vec!["a".into(), "b".into()], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3).unwrap();
        cache.write(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..5], b"SLHE1");
        assert_eq!(u32::from_le_bytes(bytes[5..9].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[9..17].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 17 + 24);
        assert_eq!(f32::from_le_bytes(bytes[17..21].try_into().unwrap()), 1.0);
        assert_eq!(std::fs::read_to_string(ids_path(&path)).unwrap(), "a\nb\n");
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.slhe");
        cache_embeddings(&EmbedderClient::mock(16), &store(4), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_cache(&path), Err(EmbedError::Format(_))));
        std::fs::write(&path, &bytes[..7]).unwrap();
        assert!(matches!(load_cache(&path), Err(EmbedError::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_cache(&path), Err(EmbedError::Format(_))));
    }

    #[test]
    fn dim_mismatch_against_client() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.slhe");
        cache_embeddings(&EmbedderClient::mock(16), &store(2), &path).unwrap();
        assert!(matches!(
            load_cache_for(&path, &EmbedderClient::mock(32)),
            Err(EmbedError::Validation(_))
        ));
    }

    #[test]
    fn reuse_skips_embedding() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.slhe");
        let s = store(10);
        cache_embeddings(&EmbedderClient::mock(32), &s, &path).unwrap();

        let mock = Arc::new(HashingEmbedder::new(32));
        let client = EmbedderClient::new(mock.clone());
        let (_, status) = cache_embeddings(&client, &s, &path).unwrap();
        assert_eq!(status, CacheStatus::Reused);
        assert_eq!(mock.texts_embedded(), 0);
    }

    #[test]
    fn corrupted_or_stale_cache_is_rebuilt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.slhe");
        let client = EmbedderClient::mock(32);
        cache_embeddings(&client, &store(5), &path).unwrap();
        let (_, status) = cache_embeddings(&client, &store(6), &path).unwrap();
        assert_eq!(status, CacheStatus::Rebuilt);
        std::fs::write(&path, b"garbage").unwrap();
        let (cache, status) = cache_embeddings(&client, &store(6), &path).unwrap();
        assert_eq!(status, CacheStatus::Rebuilt);
        assert_eq!(cache.len(), 6);
    }
}
