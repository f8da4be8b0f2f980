//! Stage orchestration behind the command-line interface.
//!
//! Layout under the output directory:
//!
//! ```text
//! qa/<domain>.jsonl           QAItem records (simulate, or user supplied)
//! features/<domain>.jsonl     FeatureRecord per (item, turn)
//! simulator.json              generator parameters used by `simulate`
//! transcripts/<domain>.jsonl  DialogueTranscript per item
//! scores/<domain>.jsonl       TurnScore per (item, turn)
//! spikes/<domain>.jsonl       SpikeRecord per item
//! probe.json                  trained probe
//! threshold.json              calibrated threshold
//! detections/<domain>.jsonl   per-item decisions
//! report.json                 leave-one-out evaluation report
//! manifests/<stage>.json      inputs, outputs, seeds and config hash
//! ```

pub mod config;
mod stages;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{BackboneKind, BackendKind, RunConfig};
pub use stages::*;

use crate::error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory when inside it.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemError {
    pub item_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_id: Option<String>,
    pub class: String,
    pub detail: String,
}

impl ItemError {
    pub fn new(item_id: impl Into<String>, domain_id: Option<&str>, e: &Error) -> Self {
        Self {
            item_id: item_id.into(),
            domain_id: domain_id.map(str::to_string),
            class: e.class().to_string(),
            detail: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    pub config_hash: String,
    pub seeds: config::Seeds,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub item_errors: Vec<ItemError>,
    #[serde(default)]
    pub notes: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    pub fn is_partial(&self) -> bool {
        !self.item_errors.is_empty()
    }
}

/// A configured run rooted at an output directory.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub out: PathBuf,
    pub hash: String,
}

impl Run {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let hash = config.hash();
        Ok(Self { out: config.out_dir.clone(), config, hash })
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.out.join(rel)
    }

    fn rel(&self, p: &Path) -> String {
        p.strip_prefix(&self.out).unwrap_or(p).to_string_lossy().replace('\\', "/")
    }

    fn artifact(&self, p: &Path) -> Result<Artifact> {
        Ok(Artifact { path: self.rel(p), sha256: config::sha256_file(p)? })
    }

    pub fn domains(&self) -> Result<Vec<String>> {
        if !self.config.domains.is_empty() {
            return Ok(self.config.domains.keys().cloned().collect());
        }
        let dir = self.path("qa");
        let mut names = BTreeSet::new();
        if let Ok(entries) = std::fs::read_dir(&dir) {
            for e in entries.flatten() {
                let p = e.path();
                if p.extension().is_some_and(|x| x == "jsonl") {
                    if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                        names.insert(stem.to_string());
                    }
                }
            }
        }
        if names.is_empty() {
            return Err(Error::Config(format!(
                "no domains: add [domains.<name>] entries or place QA files in {}",
                dir.display()
            )));
        }
        Ok(names.into_iter().collect())
    }

    pub fn qa_path(&self, domain: &str) -> PathBuf {
        self.config
            .domains
            .get(domain)
            .and_then(|d| d.qa.clone())
            .unwrap_or_else(|| self.path(format!("qa/{domain}.jsonl")))
    }

    pub fn features_path(&self, domain: &str) -> PathBuf {
        self.config
            .domains
            .get(domain)
            .and_then(|d| d.features.clone())
            .unwrap_or_else(|| self.path(format!("features/{domain}.jsonl")))
    }

    pub fn stage_path(&self, stage_dir: &str, domain: &str) -> PathBuf {
        self.path(format!("{stage_dir}/{domain}.jsonl"))
    }

    fn manifest_path(&self, stage: &str) -> PathBuf {
        self.path(format!("manifests/{stage}.json"))
    }

    fn finish(
        &self,
        stage: &str,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
        item_errors: Vec<ItemError>,
        notes: BTreeMap<String, serde_json::Value>,
    ) -> Result<Manifest> {
        let manifest = Manifest {
            stage: stage.to_string(),
            version: VERSION.to_string(),
            config_hash: self.hash.clone(),
            seeds: self.config.seeds.clone(),
            inputs: inputs.iter().map(|p| self.artifact(p)).collect::<Result<_>>()?,
            outputs: outputs.iter().map(|p| self.artifact(p)).collect::<Result<_>>()?,
            item_errors,
            notes,
        };
        write_json(&self.manifest_path(stage), &manifest)?;
        Ok(manifest)
    }

    /// Every manifest currently on disk.
    pub fn manifests(&self) -> Result<Vec<Manifest>> {
        let dir = self.path("manifests");
        let mut paths: Vec<PathBuf> = match std::fs::read_dir(&dir) {
            Ok(entries) => entries.flatten().map(|e| e.path()).filter(|p| p.extension().is_some_and(|x| x == "json")).collect(),
            Err(_) => return Ok(Vec::new()),
        };
        paths.sort();
        paths.iter().map(|p| read_json(p)).collect()
    }

    /// Checks that every input produced by an earlier stage is unchanged
    /// since then and that all of them share one config hash. Returns the
    /// distinct hashes found, keyed by input.
    pub fn check_input_hashes(&self, inputs: &[PathBuf]) -> Result<BTreeMap<String, String>> {
        let mut producers: BTreeMap<String, (String, String, String)> = BTreeMap::new();
        for m in self.manifests()? {
            for a in &m.outputs {
                producers.insert(a.path.clone(), (a.sha256.clone(), m.config_hash.clone(), m.stage.clone()));
            }
        }
        let mut found = BTreeMap::new();
        for p in inputs {
            let rel = self.rel(p);
            if let Some((sha, hash, stage)) = producers.get(&rel) {
                if &config::sha256_file(p)? != sha {
                    return Err(Error::MixedHashes(format!(
                        "{rel} changed after stage `{stage}` wrote it; rerun that stage"
                    )));
                }
                found.insert(rel, hash.clone());
            }
        }
        let distinct: BTreeSet<&String> = found.values().collect();
        if distinct.len() > 1 {
            let detail: Vec<String> = found.iter().map(|(p, h)| format!("{p}={}", &h[..12])).collect();
            return Err(Error::MixedHashes(format!("inputs come from different configurations: {}", detail.join(", "))));
        }
        Ok(found)
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::MalformedLine { line: e.line(), reason: format!("{}: {e}", path.display()) })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
