//! Run directories and their manifests.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Incomplete,
    Complete,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub status: RunStatus,
    pub command: String,
    pub method: Option<String>,
    pub seed: u64,
    pub build: String,
    pub config: RunConfig,
    pub inputs: Vec<InputHash>,
    pub started: String,
    pub finished: Option<String>,
    /// Paths relative to the run directory.
    pub outputs: Vec<String>,
    pub error: Option<String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// A run directory whose manifest is rewritten after every change.
pub struct RunDir {
    root: PathBuf,
    manifest: RunManifest,
}

impl RunDir {
    /// Refuses to reuse a directory that already holds a manifest.
    pub fn create(root: &Path, command: &str, method: Option<&str>, config: &RunConfig, inputs: &[PathBuf]) -> Result<Self> {
        if root.join(MANIFEST).exists() {
            bail!("{} already contains a run manifest", root.display());
        }
        fs::create_dir_all(root.join("checkpoints")).with_context(|| format!("creating {}", root.display()))?;
        let inputs = inputs
            .iter()
            .map(|p| {
                Ok(InputHash {
                    path: p.display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let dir = Self {
            root: root.to_path_buf(),
            manifest: RunManifest {
                status: RunStatus::Incomplete,
                command: command.to_string(),
                method: method.map(str::to_string),
                seed: config.seed,
                build: format!("{} ({})", env!("CARGO_PKG_VERSION"), env!("SEMIDIAL_BUILD_ID")),
                config: config.clone(),
                inputs,
                started: now(),
                finished: None,
                outputs: Vec::new(),
                error: None,
            },
        };
        dir.save()?;
        Ok(dir)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn record_output(&mut self, rel: &str) -> Result<()> {
        if !self.manifest.outputs.iter().any(|o| o == rel) {
            self.manifest.outputs.push(rel.to_string());
        }
        self.save()
    }

    fn save(&self) -> Result<()> {
        let tmp = self.root.join("manifest.json.tmp");
        fs::write(&tmp, serde_json::to_string_pretty(&self.manifest)?)?;
        fs::rename(&tmp, self.root.join(MANIFEST))?;
        Ok(())
    }

    /// Marks the run complete once every listed output exists.
    pub fn complete(mut self) -> Result<()> {
        let missing: Vec<&String> = self.manifest.outputs.iter().filter(|o| !self.root.join(o).exists()).collect();
        if !missing.is_empty() {
            let msg = format!("outputs missing after the run: {missing:?}");
            self.fail(&msg)?;
            bail!(msg);
        }
        self.manifest.status = RunStatus::Complete;
        self.manifest.finished = Some(now());
        self.save()
    }

    pub fn fail(&mut self, error: &str) -> Result<()> {
        self.manifest.status = RunStatus::Failed;
        self.manifest.finished = Some(now());
        self.manifest.error = Some(error.to_string());
        self.save()
    }
}
