//! Per-run output directories and the manifest that describes each run.
//!
//! Every command creates one fresh directory under the output root,
//! named `<command>-<UTC timestamp>-seed<seed>`, suffixed `-2`, `-3`, …
//! if the name is somehow taken — nothing is ever overwritten. The
//! manifest records the resolved config (all defaults materialized),
//! SHA-256 digests of every input and artifact, and the tool version.
//! It deliberately contains no timestamps or absolute paths, so two
//! runs are byte-identical in their manifests exactly when their
//! configs, inputs, and artifacts all are.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use graphfill::{Error, Result};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    /// Fully resolved configuration, defaults included.
    pub config: serde_json::Value,
    /// Input path → SHA-256 of its bytes.
    pub input_digests: BTreeMap<String, String>,
    /// Run-dir-relative artifact name → SHA-256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
}

/// An open run: the directory plus the manifest being accumulated.
pub struct RunContext {
    pub dir: PathBuf,
    manifest: RunManifest,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(hex_digest(&bytes))
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    let mut hexed = String::with_capacity(64);
    for b in out {
        hexed.push_str(&format!("{b:02x}"));
    }
    hexed
}

impl RunContext {
    /// Create the run directory and start its manifest. `config` is the
    /// command's fully resolved configuration.
    pub fn create<C: Serialize>(
        out_root: &Path,
        command: &str,
        seed: u64,
        config: &C,
    ) -> Result<RunContext> {
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
        let base = format!("{command}-{stamp}-seed{seed}");
        let mut dir = out_root.join(&base);
        let mut k = 2;
        while dir.exists() {
            dir = out_root.join(format!("{base}-{k}"));
            k += 1;
        }
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let config = serde_json::to_value(config)
            .map_err(|e| Error::Schema(format!("config not serializable: {e}")))?;
        Ok(RunContext {
            dir,
            manifest: RunManifest {
                command: command.to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                seed,
                config,
                input_digests: BTreeMap::new(),
                artifacts: BTreeMap::new(),
            },
        })
    }

    /// Record an input file's digest under the path as given.
    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        self.manifest
            .input_digests
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    /// Record the optional inputs that exist.
    pub fn record_inputs<'a>(
        &mut self,
        paths: impl IntoIterator<Item = Option<&'a Path>>,
    ) -> Result<()> {
        for p in paths.into_iter().flatten() {
            self.record_input(p)?;
        }
        Ok(())
    }

    /// Write an artifact into the run directory and record its digest.
    pub fn write_artifact(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
        self.manifest.artifacts.insert(name.to_string(), hex_digest(bytes));
        Ok(path)
    }

    /// Record a file some other component already wrote into the run
    /// directory (e.g. the trainer's checkpoint).
    pub fn note_artifact(&mut self, name: &str) -> Result<()> {
        let digest = sha256_file(&self.dir.join(name))?;
        self.manifest.artifacts.insert(name.to_string(), digest);
        Ok(())
    }

    /// Write `manifest.json` and hand back the run directory.
    pub fn finish(self) -> Result<PathBuf> {
        let path = self.dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| Error::Schema(format!("manifest not serializable: {e}")))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(self.dir)
    }
}
