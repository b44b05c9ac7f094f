//! Atomic output directories and run manifests.
//!
//! Everything is written into a hidden staging directory next to the
//! destination and renamed into place only once the command succeeded, so a
//! failed run leaves nothing behind.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

pub const MANIFEST: &str = "manifest.json";

pub struct Staging {
    dir: TempDir,
    target: PathBuf,
}

impl Staging {
    /// Refuses to replace a non-empty directory or any file.
    pub fn new(target: &Path) -> Result<Self> {
        if target.exists() {
            let empty_dir = target.is_dir() && fs::read_dir(target)?.next().is_none();
            if !empty_dir {
                bail!(crate::ConfigError(format!("output {} already exists and is not empty", target.display())));
            }
        }
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).with_context(|| format!("creating {}", parent.display()))?;
        let dir = tempfile::Builder::new()
            .prefix(".ewi-staging-")
            .tempdir_in(&parent)
            .with_context(|| format!("creating staging directory in {}", parent.display()))?;
        Ok(Self { dir, target: target.to_path_buf() })
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    /// Writes the manifest and moves the staged tree to its destination.
    pub fn commit(self, mut manifest: Manifest) -> Result<PathBuf> {
        manifest.artifacts = hash_tree(self.dir.path())?;
        ewi_core::io::write_json(&self.dir.path().join(MANIFEST), &manifest)?;
        if self.target.is_dir() {
            fs::remove_dir(&self.target)?;
        }
        let staged = self.dir.keep();
        fs::rename(&staged, &self.target).with_context(|| format!("moving results to {}", self.target.display()))?;
        Ok(self.target)
    }
}

/// Enough to re-run a command and check its outputs bit for bit. Carries no
/// timestamps or output location, so identical runs give identical manifests.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<&'static str, u64>,
    pub inputs: BTreeMap<String, String>,
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new<C: Serialize>(command: &'static str, config: &C) -> Result<Self> {
        Ok(Self {
            tool: "ewi",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config: serde_json::to_value(config)?,
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
        })
    }

    pub fn seed(mut self, name: &'static str, seed: u64) -> Self {
        self.seeds.insert(name, seed);
        self
    }

    /// Records the digest of an input file, or of every file under a directory.
    pub fn input(mut self, path: &Path) -> Result<Self> {
        if path.is_dir() {
            for (rel, digest) in hash_tree(path)? {
                self.inputs.insert(format!("{}/{rel}", path.display()), digest);
            }
        } else {
            self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        }
        Ok(self)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("below root").to_path_buf());
        }
    }
    Ok(())
}

/// sha256 of every file below `root`, keyed by `/`-separated relative path.
pub fn hash_tree(root: &Path) -> Result<BTreeMap<String, String>> {
    let mut files = Vec::new();
    collect_files(root, root, &mut files)?;
    files
        .into_iter()
        .map(|rel| {
            let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            Ok((key, sha256_file(&root.join(&rel))?))
        })
        .collect()
}
