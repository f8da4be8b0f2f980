//! Run configuration: one TOML file, unknown fields rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dialogue::simulator::SimulatorProfile;
use crate::dialogue::{DecodingConfig, HttpBackendConfig, RetryPolicy};
use crate::error::{Error, Result};
use crate::evaluation::EvalOptions;
use crate::scoring::{Objective, Orientation, ProbeHyper, TokenPosition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Sim,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Sim,
    Perplexity,
    Probe,
    External,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub prompt: u64,
    pub sampling: u64,
    pub split: u64,
    pub mixture: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodingSection {
    pub temperature: f64,
    pub top_p: f64,
    pub max_answer_tokens: u32,
}

impl Default for DecodingSection {
    fn default() -> Self {
        let d = DecodingConfig::conservative();
        Self { temperature: d.temperature, top_p: d.top_p, max_answer_tokens: d.max_answer_tokens }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub objective: Objective,
    pub token_position: TokenPosition,
    pub hidden_dims: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub huber_delta: f64,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let h = ProbeHyper::default();
        Self {
            objective: Objective::CrossEntropy,
            token_position: TokenPosition::Last,
            hidden_dims: h.hidden_dims,
            epochs: h.epochs,
            learning_rate: h.learning_rate,
            batch_size: h.batch_size,
            seed: h.seed,
            huber_delta: h.huber_delta,
        }
    }
}

impl ProbeSection {
    pub fn hyper(&self) -> ProbeHyper {
        ProbeHyper {
            hidden_dims: self.hidden_dims.clone(),
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed: self.seed,
            huber_delta: self.huber_delta,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExternalSection {
    pub orientation: Orientation,
}

/// Record paths for one domain. Missing entries default to the run's
/// output layout.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainPaths {
    pub qa: Option<PathBuf>,
    pub features: Option<PathBuf>,
    /// Externally computed per-turn scores.
    pub scores: Option<PathBuf>,
    /// Regression targets for the Huber probe: JSONL `{item_id, target}`.
    pub targets: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulatorSection {
    pub n_domains: usize,
    pub items_per_domain: usize,
    pub hallucination_rate: f64,
    pub emit_features: bool,
    pub feature_dim: usize,
    pub profile: SimulatorProfile,
}

impl Default for SimulatorSection {
    fn default() -> Self {
        Self {
            n_domains: 6,
            items_per_domain: 500,
            hallucination_rate: 0.4,
            emit_features: true,
            feature_dim: 16,
            profile: SimulatorProfile::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderSection {
    /// Embedding service URL; the hashing embedder is used when absent.
    pub endpoint: Option<String>,
    pub dimension: usize,
    pub timeout_secs: u64,
}

impl Default for EmbedderSection {
    fn default() -> Self {
        Self { endpoint: None, dimension: 256, timeout_secs: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RagSection {
    pub top_k: usize,
    /// Per-context character cap; contexts are passed whole when absent.
    pub context_char_cap: Option<usize>,
    pub embedder: EmbedderSection,
}

impl Default for RagSection {
    fn default() -> Self {
        Self { top_k: crate::rag::DEFAULT_TOP_K, context_char_cap: None, embedder: EmbedderSection::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub backend: BackendKind,
    pub backbone: BackboneKind,
    /// Turns per dialogue, counting the initial answer.
    pub k: usize,
    /// Worker threads for induction and scoring.
    pub workers: usize,
    /// Prepend the polite-aligned system directive to every dialogue.
    pub polite_directive: bool,
    /// Ask the backend for token log-probabilities.
    pub request_logprobs: bool,
    pub seeds: Seeds,
    pub decoding: DecodingSection,
    pub retry: RetryPolicy,
    pub http: Option<HttpBackendConfig>,
    pub probe: ProbeSection,
    pub external: ExternalSection,
    pub evaluation: EvalOptions,
    pub simulator: SimulatorSection,
    pub rag: RagSection,
    pub domains: BTreeMap<String, DomainPaths>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            backend: BackendKind::Sim,
            backbone: BackboneKind::Sim,
            k: 20,
            workers: 1,
            polite_directive: false,
            request_logprobs: true,
            seeds: Seeds::default(),
            decoding: DecodingSection::default(),
            retry: RetryPolicy::default(),
            http: None,
            probe: ProbeSection::default(),
            external: ExternalSection::default(),
            evaluation: EvalOptions::default(),
            simulator: SimulatorSection::default(),
            rag: RagSection::default(),
            domains: BTreeMap::new(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().replace('\n', " ")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn decoding(&self) -> DecodingConfig {
        DecodingConfig {
            temperature: self.decoding.temperature,
            top_p: self.decoding.top_p,
            max_answer_tokens: self.decoding.max_answer_tokens,
            turn_budget: self.k,
        }
    }

    /// Sets every seed to `seed`.
    pub fn override_seeds(&mut self, seed: u64) {
        self.seeds = Seeds { prompt: seed, sampling: seed, split: seed, mixture: seed };
        self.probe.seed = seed;
        self.evaluation.mixture_seed = seed;
        self.evaluation.split_seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.decoding().validate()?;
        if self.k < 3 {
            return Err(Error::Config(format!("k = {} is too small; SpikeScore needs at least 3 turns", self.k)));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.backend == BackendKind::Http && self.http.is_none() {
            return Err(Error::Config("backend = \"http\" needs an [http] section".into()));
        }
        let s = &self.simulator;
        if !(0.0..=1.0).contains(&s.hallucination_rate) {
            return Err(Error::Config("simulator.hallucination_rate must be in [0, 1]".into()));
        }
        if s.n_domains == 0 || s.items_per_domain == 0 || s.feature_dim == 0 {
            return Err(Error::Config("simulator sizes must be positive".into()));
        }
        if !(self.evaluation.target_fpr > 0.0 && self.evaluation.target_fpr < 1.0) {
            return Err(Error::Config("evaluation.target_fpr must be in (0, 1)".into()));
        }
        if let Some(name) = self.domains.keys().find(|n| n.is_empty() || n.contains(['/', '\\'])) {
            return Err(Error::Config(format!("invalid domain name {name:?}")));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, with `out_dir` left out so the
    /// same configuration hashes identically wherever it writes.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().expect("object").remove("out_dir");
        let canonical = serde_json::to_string(&v).expect("value serializes");
        hex(&Sha256::digest(canonical.as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_unknown_fields() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c.k, 20);
        assert_eq!(c.decoding().temperature, 0.2);
        assert_eq!(c.evaluation.target_fpr, 0.05);
        c.validate().unwrap();
        assert!(matches!(RunConfig::from_toml("bogus = 1"), Err(Error::Config(_))));
        assert!(RunConfig::from_toml("[seeds]\nprmpt = 1").is_err());
    }

    #[test]
    fn parses_sections() {
        let c = RunConfig::from_toml(
            r#"
k = 12
backbone = "probe"
[seeds]
prompt = 4
[probe]
objective = "huber_regression"
hidden_dims = [32]
epochs = 50
[domains.trivia]
qa = "data/trivia.jsonl"
"#,
        )
        .unwrap();
        assert_eq!(c.k, 12);
        assert_eq!(c.backbone, BackboneKind::Probe);
        assert_eq!(c.probe.hidden_dims, vec![32]);
        assert_eq!(c.probe.learning_rate, 0.05);
        assert_eq!(c.domains["trivia"].qa.as_deref(), Some(Path::new("data/trivia.jsonl")));
    }

    #[test]
    fn hash_ignores_out_dir_only() {
        let a = RunConfig::default();
        let b = RunConfig { out_dir: "elsewhere".into(), ..RunConfig::default() };
        assert_eq!(a.hash(), b.hash());
        let mut c = RunConfig::default();
        c.override_seeds(3);
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn validation() {
        assert!(RunConfig { k: 2, ..Default::default() }.validate().is_err());
        assert!(RunConfig { backend: BackendKind::Http, ..Default::default() }.validate().is_err());
    }
}
