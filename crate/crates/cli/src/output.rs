//! Staged run directories: everything is written to a temporary sibling
//! and renamed into place once the command succeeds.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use slhyde::textgen::PromptLibrary;

use crate::config::RunConfig;
use crate::CliError;

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";
pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct Staging {
    dir: tempfile::TempDir,
    target: PathBuf,
}

impl Staging {
    pub fn new(target: &Path) -> Result<Self, CliError> {
        let name = target
            .file_name()
            .ok_or_else(|| CliError::Validation(format!("{}: not a directory name", target.display())))?
            .to_string_lossy()
            .into_owned();
        let parent = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        let dir = tempfile::Builder::new()
            .prefix(&format!(".{name}.staging-"))
            .tempdir_in(parent)
            .map_err(|e| CliError::io(parent, e))?;
        Ok(Staging {
            dir,
            target: target.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn join(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.dir.path().join(rel)
    }

    /// Replaces the target with the staged tree. A dropped, unpromoted
    /// staging directory is deleted.
    pub fn promote(self) -> Result<PathBuf, CliError> {
        let staged = self.dir.keep();
        if self.target.exists() {
            let old = staged.with_extension("old");
            std::fs::rename(&self.target, &old).map_err(|e| CliError::io(&self.target, e))?;
            std::fs::rename(&staged, &self.target).map_err(|e| CliError::io(&self.target, e))?;
            std::fs::remove_dir_all(&old).map_err(|e| CliError::io(&old, e))?;
        } else {
            std::fs::rename(&staged, &self.target).map_err(|e| CliError::io(&self.target, e))?;
        }
        Ok(self.target)
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub clients: String,
    pub generator: String,
    pub embedder: String,
    pub templates: BTreeMap<String, String>,
    /// SHA-256 of every output file, by path relative to the run directory.
    pub files: BTreeMap<String, String>,
    pub degraded: Vec<String>,
}

fn walk(dir: &Path, base: &Path, out: &mut BTreeMap<String, String>) -> std::io::Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if e.file_type()?.is_dir() {
            walk(&p, base, out)?;
        } else {
            let rel = p.strip_prefix(base).expect("under base").to_string_lossy().replace('\\', "/");
            out.insert(rel, sha256_hex(&std::fs::read(&p)?));
        }
    }
    Ok(())
}

pub struct RunInfo<'a> {
    pub command: &'a str,
    pub config: &'a RunConfig,
    pub prompts: &'a PromptLibrary,
    pub generator: String,
    pub embedder: String,
    pub degraded: Vec<String>,
}

/// Writes the resolved config, then a manifest covering every file staged
/// so far.
pub fn finish(stage: &Staging, info: RunInfo<'_>) -> Result<(), CliError> {
    let cfg_path = stage.join(RESOLVED_CONFIG);
    std::fs::write(&cfg_path, info.config.resolved_toml()).map_err(|e| CliError::io(&cfg_path, e))?;
    let mut files = BTreeMap::new();
    walk(stage.path(), stage.path(), &mut files).map_err(|e| CliError::io(stage.path(), e))?;
    let manifest = Manifest {
        command: info.command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: info.config.seed,
        clients: format!("{:?}", info.config.clients).to_lowercase(),
        generator: info.generator,
        embedder: info.embedder,
        templates: info
            .prompts
            .iter()
            .map(|t| (t.name.clone(), sha256_hex(t.body.as_bytes())))
            .collect(),
        files,
        degraded: info.degraded,
    };
    let path = stage.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json + "\n").map_err(|e| CliError::io(&path, e))
}
