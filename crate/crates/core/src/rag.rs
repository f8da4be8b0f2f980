//! Exact cosine retrieval over a document corpus and RAG prompt assembly.

use std::collections::HashSet;
use std::io::BufRead;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::rng::fnv1a;

pub const DEFAULT_TOP_K: usize = 4;
pub const NO_CONTEXT_MARKER: &str = "[no context retrieved]";

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>>;
}

/// Deterministic bag-of-words feature hashing: every lowercase alphanumeric
/// token and token bigram adds ±1 to one of `dimension` buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    pub dimension: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dimension: 256 }
    }
}

impl HashingEmbedder {
    fn add(&self, v: &mut [f64], feature: &str) {
        let h = fnv1a(feature.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[(h % self.dimension as u64) as usize] += sign;
    }
}

impl Embedder for HashingEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        if texts.is_empty() {
            return Err(Error::InvalidArgument("no texts to embed".into()));
        }
        if self.dimension == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        Ok(texts
            .iter()
            .map(|t| {
                let lower = t.to_lowercase();
                let tokens: Vec<&str> =
                    lower.split(|c: char| !c.is_alphanumeric()).filter(|s| !s.is_empty()).collect();
                let mut v = vec![0.0; self.dimension];
                for tok in &tokens {
                    self.add(&mut v, tok);
                }
                for w in tokens.windows(2) {
                    self.add(&mut v, &format!("{} {}", w[0], w[1]));
                }
                v
            })
            .collect())
    }
}

/// Client for an embedding service taking `{"texts": [...]}` and answering
/// `{"vectors": [[...], ...]}`.
pub struct HttpEmbedder {
    endpoint: String,
    dimension: usize,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, dimension: usize, timeout_secs: u64) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { endpoint: endpoint.into(), dimension, agent }
    }
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

impl Embedder for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        use crate::dialogue::BackendError;
        if texts.is_empty() {
            return Err(Error::InvalidArgument("no texts to embed".into()));
        }
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(json!({ "texts": texts }))
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let code = resp.status().as_u16();
        if code >= 400 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError::Status { code, body }.into());
        }
        let r: EmbedResponse =
            resp.body_mut().read_json().map_err(|e| BackendError::Malformed(e.to_string()))?;
        if r.vectors.len() != texts.len() {
            return Err(Error::DimensionMismatch { expected: texts.len(), actual: r.vectors.len() });
        }
        if let Some(v) = r.vectors.iter().find(|v| v.len() != self.dimension) {
            return Err(Error::DimensionMismatch { expected: self.dimension, actual: v.len() });
        }
        Ok(r.vectors)
    }
}

/// Embeds in batches of `batch_size`, checking a uniform dimension.
pub fn embed_texts(texts: &[&str], embedder: &dyn Embedder, batch_size: usize) -> Result<Vec<Vec<f64>>> {
    if texts.is_empty() {
        return Err(Error::InvalidArgument("no texts to embed".into()));
    }
    let mut out = Vec::with_capacity(texts.len());
    for batch in texts.chunks(batch_size.max(1)) {
        let vs = embedder.embed(batch)?;
        if vs.len() != batch.len() {
            return Err(Error::DimensionMismatch { expected: batch.len(), actual: vs.len() });
        }
        for v in vs {
            if v.len() != embedder.dimension() {
                return Err(Error::DimensionMismatch { expected: embedder.dimension(), actual: v.len() });
            }
            out.push(v);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusDoc {
    pub doc_id: String,
    pub text: String,
    /// Unit-normalized.
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalIndex {
    pub dimension: usize,
    /// Sorted by `doc_id`.
    pub documents: Vec<CorpusDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusLine {
    pub doc_id: String,
    pub text: String,
}

pub fn read_corpus(reader: impl BufRead) -> Result<Vec<CorpusLine>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::MalformedLine { line: i + 1, reason: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::MalformedLine { line: i + 1, reason: e.to_string() })?,
        );
    }
    Ok(out)
}

pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFinite("embedding has a non-finite component".into()));
    }
    if norm == 0.0 {
        return Err(Error::Degenerate("zero embedding cannot be normalized".into()));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

impl RetrievalIndex {
    /// Builds from precomputed raw embeddings; each row is normalized.
    pub fn from_vectors(rows: Vec<(String, String, Vec<f64>)>) -> Result<Self> {
        let dimension = rows.first().map(|r| r.2.len()).unwrap_or(0);
        let mut seen = HashSet::new();
        let mut documents = Vec::with_capacity(rows.len());
        for (doc_id, text, raw) in rows {
            if !seen.insert(doc_id.clone()) {
                return Err(Error::DuplicateId(doc_id));
            }
            if raw.len() != dimension {
                return Err(Error::DimensionMismatch { expected: dimension, actual: raw.len() });
            }
            let embedding = normalize(&raw).map_err(|e| Error::InvalidArgument(format!("document {doc_id}: {e}")))?;
            documents.push(CorpusDoc { doc_id, text, embedding });
        }
        documents.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        Ok(Self { dimension, documents })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&CorpusDoc> {
        self.documents
            .binary_search_by(|d| d.doc_id.as_str().cmp(doc_id))
            .ok()
            .map(|i| &self.documents[i])
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev: Option<&str> = None;
        for d in &self.documents {
            if prev.is_some_and(|p| p >= d.doc_id.as_str()) {
                return Err(Error::DuplicateId(format!("{} (or documents out of order)", d.doc_id)));
            }
            if d.embedding.len() != self.dimension {
                return Err(Error::DimensionMismatch { expected: self.dimension, actual: d.embedding.len() });
            }
            let norm = d.embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("document {} is not unit-normalized", d.doc_id)));
            }
            prev = Some(&d.doc_id);
        }
        Ok(())
    }

    /// Exact top-k by cosine against a raw query vector; score descending,
    /// ties by ascending `doc_id`.
    pub fn query_vector(&self, query: &[f64], k: usize) -> Result<Vec<(String, f64)>> {
        if k > self.len() {
            return Err(Error::out_of_range("k", k, 0, self.len()));
        }
        if query.len() != self.dimension {
            return Err(Error::DimensionMismatch { expected: self.dimension, actual: query.len() });
        }
        let q = normalize(query)?;
        let mut scored: Vec<(usize, f64)> = self
            .documents
            .iter()
            .enumerate()
            .map(|(i, d)| (i, d.embedding.iter().zip(&q).map(|(a, b)| a * b).sum()))
            .collect();
        // Documents are id-sorted, so the index doubles as the id tie-break.
        let cmp = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if k < scored.len() && k > 0 {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        scored.truncate(k);
        Ok(scored.into_iter().map(|(i, s)| (self.documents[i].doc_id.clone(), s)).collect())
    }
}

pub fn build_index(docs: &[CorpusLine], embedder: &dyn Embedder) -> Result<RetrievalIndex> {
    let mut seen = HashSet::new();
    for d in docs {
        if !seen.insert(d.doc_id.as_str()) {
            return Err(Error::DuplicateId(d.doc_id.clone()));
        }
    }
    let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    let vectors = embed_texts(&texts, embedder, 64)?;
    RetrievalIndex::from_vectors(
        docs.iter().zip(vectors).map(|(d, v)| (d.doc_id.clone(), d.text.clone(), v)).collect(),
    )
}

pub fn retrieve_top_k(
    index: &RetrievalIndex,
    query_text: &str,
    k: usize,
    embedder: &dyn Embedder,
) -> Result<Vec<(String, f64)>> {
    let q = embedder.embed(&[query_text])?.pop().expect("one vector per text");
    index.query_vector(&q, k)
}

/// Contexts in rank order, each labeled, followed by the question. With
/// `char_cap` set, each context is cut to at most that many characters.
pub fn assemble_rag_prompt(question: &str, contexts: &[&str], char_cap: Option<usize>) -> String {
    let mut out = String::new();
    if contexts.is_empty() {
        out.push_str(NO_CONTEXT_MARKER);
        out.push_str("\n\n");
    }
    for (i, c) in contexts.iter().enumerate() {
        let text: String = match char_cap {
            Some(cap) => c.chars().take(cap).collect(),
            None => c.to_string(),
        };
        out.push_str(&format!("Context [{}]:\n{}\n\n", i + 1, text.trim_end()));
    }
    out.push_str("Question: ");
    out.push_str(question);
    out
}
