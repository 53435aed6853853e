//! Per-run manifests. Every file a command writes is listed in exactly one.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub run_id: String,
    pub status: RunStatus,
    #[serde(default)]
    pub error: Option<String>,
    /// The effective flat configuration.
    pub config: BTreeMap<String, String>,
    /// Upstream run directories by role (`pretrain`, `split`).
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    /// File names relative to the run directory.
    #[serde(default)]
    pub artifacts: Vec<String>,
    #[serde(default)]
    pub vocab_hash: Option<String>,
    #[serde(default)]
    pub head: Option<String>,
    #[serde(default)]
    pub mode: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub results: BTreeMap<String, f64>,
    pub started_at: u64,
    #[serde(default)]
    pub finished_at: Option<u64>,
}

pub fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// First 16 hex digits of SHA-256 over `parts`, newline separated.
pub fn content_id(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())[..16].to_string()
}

impl RunManifest {
    pub fn start(command: &str, run_id: String, config: BTreeMap<String, String>) -> Self {
        RunManifest {
            command: command.into(),
            run_id,
            status: RunStatus::Running,
            error: None,
            config,
            inputs: BTreeMap::new(),
            artifacts: Vec::new(),
            vocab_hash: None,
            head: None,
            mode: None,
            seed: None,
            results: BTreeMap::new(),
            started_at: now(),
            finished_at: None,
        }
    }

    pub fn add_artifact(&mut self, name: &str) {
        if !self.artifacts.iter().any(|a| a == name) {
            self.artifacts.push(name.to_string());
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
    }

    /// Returns the manifest only if the run finished successfully.
    pub fn load_complete(dir: &Path) -> Option<Self> {
        Self::load(dir).ok().filter(|m| m.status == RunStatus::Complete)
    }

    /// Written through a temporary file so readers never see half a manifest.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(&path, e))?;
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    pub fn finish(&mut self, dir: &Path, outcome: &Result<()>) -> Result<()> {
        self.finished_at = Some(now());
        match outcome {
            Ok(()) => {
                self.status = RunStatus::Complete;
                self.error = None;
            }
            Err(e) => {
                self.status = RunStatus::Failed;
                self.error = Some(e.to_string());
            }
        }
        self.save(dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_status() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::start("train", content_id(&["a", "b"]), BTreeMap::new());
        m.add_artifact("x.json");
        m.add_artifact("x.json");
        m.save(dir.path()).unwrap();
        assert!(RunManifest::load_complete(dir.path()).is_none());
        m.finish(dir.path(), &Ok(())).unwrap();
        let back = RunManifest::load_complete(dir.path()).unwrap();
        assert_eq!(back.artifacts, vec!["x.json".to_string()]);
        assert_eq!(back.run_id.len(), 16);
        assert_ne!(content_id(&["ab", ""]), content_id(&["a", "b"]));
    }
}
