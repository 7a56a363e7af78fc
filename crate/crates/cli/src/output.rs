//! Atomic artifact writes and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| -> Result<()> {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, serde_json::Value>,
    /// Input path → sha256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    /// Output file name → sha256 of its bytes.
    pub outputs: BTreeMap<String, String>,
}

/// Collects a command's outputs in memory, then writes each atomically
/// followed by `manifest.json`.
pub struct Run {
    dir: PathBuf,
    command: String,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, Vec<u8>>,
}

impl Run {
    pub fn new(dir: &Path, command: &str, config: serde_json::Value) -> Self {
        Self { dir: dir.to_path_buf(), command: command.into(), config, inputs: BTreeMap::new(), outputs: BTreeMap::new() }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, name: &str, bytes: Vec<u8>) {
        self.outputs.insert(name.into(), bytes);
    }

    pub fn finish(self) -> Result<()> {
        fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        let seeds = match &self.config {
            serde_json::Value::Object(m) => {
                m.iter().filter(|(k, _)| k.ends_with("seed")).map(|(k, v)| (k.clone(), v.clone())).collect()
            }
            _ => BTreeMap::new(),
        };
        let mut digests = BTreeMap::new();
        for (name, bytes) in &self.outputs {
            write_atomic(&self.dir.join(name), bytes)?;
            digests.insert(name.clone(), hex::encode(Sha256::digest(bytes)));
        }
        let manifest = Manifest {
            tool: "mmlink",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            config: self.config,
            seeds,
            inputs: self.inputs,
            outputs: digests,
        };
        let mut json = serde_json::to_vec_pretty(&manifest)?;
        json.push(b'\n');
        write_atomic(&self.dir.join("manifest.json"), &json)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
