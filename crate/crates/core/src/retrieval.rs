//! Embedding providers and the exhaustive-scan cosine index.

use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Duration;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::json;
use thiserror::Error;
use xxhash_rust::xxh3::xxh3_64_with_seed;

pub const DEFAULT_DIM: usize = 768;
pub const DEFAULT_K: usize = 5;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("cannot embed text with no tokens")]
    EmptyText,
    #[error("embedding request failed: {0}")]
    Network(String),
    #[error("embedding response malformed: {0}")]
    Malformed(String),
    #[error("credential missing: {0}")]
    Credential(String),
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("vector from provider {got} cannot be compared with index built by {expected}")]
    ProviderMismatch { expected: String, got: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub provider_id: String,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `(a·b) / (‖a‖‖b‖)`, clamped to [-1, 1].
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, RetrievalError> {
    if a.provider_id != b.provider_id {
        return Err(RetrievalError::ProviderMismatch {
            expected: a.provider_id.clone(),
            got: b.provider_id.clone(),
        });
    }
    cosine_values(&a.values, &b.values)
}

pub fn cosine_values(a: &[f64], b: &[f64]) -> Result<f64, RetrievalError> {
    if a.len() != b.len() {
        return Err(RetrievalError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(RetrievalError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError>;
}

/// Deterministic local provider: signed feature hashing of lower-cased
/// alphanumeric tokens, L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedBagProvider {
    pub dim: usize,
    pub seed: u64,
}

impl Default for HashedBagProvider {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            seed: 0,
        }
    }
}

pub fn embedding_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    static TOKEN: OnceLock<Regex> = OnceLock::new();
    TOKEN
        .get_or_init(|| Regex::new(r"[A-Za-z0-9]+").unwrap())
        .find_iter(text)
        .map(|m| m.as_str().to_ascii_lowercase())
}

impl EmbeddingProvider for HashedBagProvider {
    fn id(&self) -> String {
        format!("hashed-bow-{}-s{}", self.dim, self.seed)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let mut values = vec![0.0f64; self.dim];
        let mut any = false;
        for tok in embedding_tokens(text) {
            let h = xxh3_64_with_seed(tok.as_bytes(), self.seed);
            let slot = (h % self.dim as u64) as usize;
            values[slot] += if h >> 63 == 0 { 1.0 } else { -1.0 };
            any = true;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !any || norm == 0.0 {
            return Err(ProviderError::EmptyText);
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(EmbeddingVector {
            values,
            provider_id: self.id(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpEmbeddingProfile {
    pub id: String,
    pub endpoint: String,
    pub model: String,
    pub dim: usize,
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
}

impl Default for HttpEmbeddingProfile {
    fn default() -> Self {
        Self {
            id: "http-embed".into(),
            endpoint: "https://api.openai.com/v1/embeddings".into(),
            model: String::new(),
            dim: DEFAULT_DIM,
            api_key_env: Some("OPENAI_API_KEY".into()),
            timeout_secs: 60,
        }
    }
}

/// Remote provider speaking the OpenAI-compatible embeddings wire shape.
pub struct HttpEmbeddingProvider {
    profile: HttpEmbeddingProfile,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpEmbeddingProvider {
    pub fn new(profile: HttpEmbeddingProfile) -> Result<Self, ProviderError> {
        let api_key = match &profile.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| ProviderError::Credential(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(profile.timeout_secs.max(1)))
            .build()
            .map_err(|e| ProviderError::Network(e.to_string()))?;
        Ok(Self {
            profile,
            api_key,
            client,
        })
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn id(&self) -> String {
        format!("{}:{}", self.profile.id, self.profile.model)
    }

    fn dim(&self) -> usize {
        self.profile.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyText);
        }
        let mut rb = self
            .client
            .post(&self.profile.endpoint)
            .json(&json!({"model": self.profile.model, "input": [text]}));
        if let Some(key) = &self.api_key {
            rb = rb.bearer_auth(key);
        }
        let resp = rb
            .send()
            .map_err(|e| ProviderError::Network(e.without_url().to_string()))?;
        if !resp.status().is_success() {
            return Err(ProviderError::Network(format!("HTTP {}", resp.status())));
        }
        let v: serde_json::Value = resp
            .json()
            .map_err(|e| ProviderError::Malformed(e.without_url().to_string()))?;
        let values: Vec<f64> = v["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| ProviderError::Malformed("missing data[0].embedding".into()))?
            .iter()
            .map(|x| x.as_f64().filter(|f| f.is_finite()))
            .collect::<Option<_>>()
            .ok_or_else(|| ProviderError::Malformed("non-numeric embedding entry".into()))?;
        if values.len() != self.profile.dim {
            return Err(ProviderError::Malformed(format!(
                "expected {} dimensions, got {}",
                self.profile.dim,
                values.len()
            )));
        }
        Ok(EmbeddingVector {
            values,
            provider_id: self.id(),
        })
    }
}

/// What the index stores per entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexedPair {
    pub id: String,
    pub instruction: String,
    pub code: String,
}

impl IndexedPair {
    pub fn embedding_text(&self) -> String {
        format!("{}\n{}", self.instruction, self.code)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub pair_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub hits: Vec<Hit>,
    pub k: usize,
    /// First hit's score; negative infinity (`null` in JSON) for an empty index.
    #[serde(serialize_with = "finite_or_null", deserialize_with = "null_as_neg_inf")]
    pub max_score: f64,
}

impl RetrievalResult {
    pub fn empty(k: usize) -> Self {
        Self {
            hits: Vec::new(),
            k,
            max_score: f64::NEG_INFINITY,
        }
    }
}

fn finite_or_null<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn null_as_neg_inf<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub provider_id: String,
    pub dim: usize,
    pub count: usize,
    pub seed: u64,
}

/// Flat float32 matrix with one row per pair; queries scan every row.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    manifest: IndexManifest,
    pairs: Vec<IndexedPair>,
    data: Vec<f32>,
    norms: Vec<f64>,
}

impl VectorIndex {
    pub fn new(provider_id: impl Into<String>, dim: usize, seed: u64) -> Self {
        Self {
            manifest: IndexManifest {
                provider_id: provider_id.into(),
                dim,
                count: 0,
                seed,
            },
            pairs: Vec::new(),
            data: Vec::new(),
            norms: Vec::new(),
        }
    }

    /// Embeds every pair (in parallel) and stores them in input order.
    pub fn build(pairs: Vec<IndexedPair>, provider: &dyn EmbeddingProvider, seed: u64) -> Result<Self, RetrievalError> {
        let vectors: Vec<EmbeddingVector> = pairs
            .par_iter()
            .map(|p| provider.embed(&p.embedding_text()))
            .collect::<Result<_, _>>()?;
        let mut index = Self::new(provider.id(), provider.dim(), seed);
        for (p, v) in pairs.into_iter().zip(vectors) {
            index.add(p, &v)?;
        }
        Ok(index)
    }

    pub fn add(&mut self, pair: IndexedPair, v: &EmbeddingVector) -> Result<(), RetrievalError> {
        self.check(v)?;
        let row: Vec<f32> = v.values.iter().map(|&x| x as f32).collect();
        let norm = row_norm(&row);
        if norm == 0.0 {
            return Err(RetrievalError::ZeroVector);
        }
        self.data.extend_from_slice(&row);
        self.norms.push(norm);
        self.pairs.push(pair);
        self.manifest.count += 1;
        Ok(())
    }

    fn check(&self, v: &EmbeddingVector) -> Result<(), RetrievalError> {
        if v.provider_id != self.manifest.provider_id {
            return Err(RetrievalError::ProviderMismatch {
                expected: self.manifest.provider_id.clone(),
                got: v.provider_id.clone(),
            });
        }
        if v.dim() != self.manifest.dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.manifest.dim,
                got: v.dim(),
            });
        }
        Ok(())
    }

    pub fn manifest(&self) -> &IndexManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[IndexedPair] {
        &self.pairs
    }

    pub fn pair(&self, id: &str) -> Option<&IndexedPair> {
        self.pairs.iter().find(|p| p.id == id)
    }

    /// Stored (float32-rounded) vector of row `i`.
    pub fn row(&self, i: usize) -> &[f32] {
        let d = self.manifest.dim;
        &self.data[i * d..(i + 1) * d]
    }

    /// Top-k by cosine; ties broken by ascending pair id.
    pub fn query_vector(&self, q: &EmbeddingVector, k: usize) -> Result<RetrievalResult, RetrievalError> {
        self.check(q)?;
        let qn = q.norm();
        if qn == 0.0 {
            return Err(RetrievalError::ZeroVector);
        }
        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .map(|i| {
                let dot: f64 = self.row(i).iter().zip(&q.values).map(|(&a, &b)| a as f64 * b).sum();
                (i, (dot / (qn * self.norms[i])).clamp(-1.0, 1.0))
            })
            .collect();
        scored.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.pairs[a.0].id.cmp(&self.pairs[b.0].id))
                .then(Ordering::Equal)
        });
        scored.truncate(k);
        let hits: Vec<Hit> = scored
            .into_iter()
            .map(|(i, score)| Hit {
                pair_id: self.pairs[i].id.clone(),
                score,
            })
            .collect();
        let max_score = hits.first().map_or(f64::NEG_INFINITY, |h| h.score);
        Ok(RetrievalResult { hits, k, max_score })
    }

    pub fn query(
        &self,
        text: &str,
        provider: &dyn EmbeddingProvider,
        k: usize,
    ) -> Result<RetrievalResult, RetrievalError> {
        if self.is_empty() {
            return Ok(RetrievalResult::empty(k));
        }
        self.query_vector(&provider.embed(text)?, k)
    }

    pub fn save(&self, dir: &Path) -> Result<(), RetrievalError> {
        let io = |path: &Path| {
            let path = path.to_owned();
            move |source| RetrievalError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;

        let manifest = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        crate::fsutil::write_atomic(&manifest, text.as_bytes()).map_err(io(&manifest))?;

        let vectors = dir.join("vectors.f32");
        let bytes: Vec<u8> = self.data.iter().flat_map(|x| x.to_le_bytes()).collect();
        crate::fsutil::write_atomic(&vectors, &bytes).map_err(io(&vectors))?;

        let ids = dir.join("ids.txt");
        let mut id_text = String::new();
        for p in &self.pairs {
            id_text.push_str(&p.id);
            id_text.push('\n');
        }
        crate::fsutil::write_atomic(&ids, id_text.as_bytes()).map_err(io(&ids))?;

        let pairs = dir.join("pairs.jsonl");
        crate::fsutil::write_jsonl(&pairs, &self.pairs).map_err(io(&pairs))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, RetrievalError> {
        let io = |path: &Path| {
            let path = path.to_owned();
            move |source| RetrievalError::Io { path, source }
        };
        let bad = |path: &Path, message: String| RetrievalError::Format {
            path: path.to_owned(),
            message,
        };

        let mpath = dir.join("manifest.json");
        let manifest: IndexManifest = serde_json::from_str(&fs::read_to_string(&mpath).map_err(io(&mpath))?)
            .map_err(|e| bad(&mpath, e.to_string()))?;

        let vpath = dir.join("vectors.f32");
        let bytes = fs::read(&vpath).map_err(io(&vpath))?;
        if bytes.len() != manifest.count * manifest.dim * 4 {
            return Err(bad(
                &vpath,
                format!(
                    "expected {} bytes, found {}",
                    manifest.count * manifest.dim * 4,
                    bytes.len()
                ),
            ));
        }
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();

        let ipath = dir.join("ids.txt");
        let ids: Vec<String> = fs::read_to_string(&ipath)
            .map_err(io(&ipath))?
            .lines()
            .map(str::to_owned)
            .collect();

        let ppath = dir.join("pairs.jsonl");
        let pairs: Vec<IndexedPair> = crate::fsutil::read_jsonl(&ppath).map_err(io(&ppath))?;
        if pairs.len() != manifest.count || ids.len() != manifest.count {
            return Err(bad(
                dir,
                format!("manifest count {} disagrees with stored entries", manifest.count),
            ));
        }
        if let Some((i, _)) = ids.iter().zip(&pairs).enumerate().find(|(_, (id, p))| **id != p.id) {
            return Err(bad(&ipath, format!("id list disagrees with pairs at row {i}")));
        }
        let d = manifest.dim;
        let norms = (0..manifest.count)
            .map(|i| row_norm(&data[i * d..(i + 1) * d]))
            .collect();
        Ok(Self {
            manifest,
            pairs,
            data,
            norms,
        })
    }
}

fn row_norm(row: &[f32]) -> f64 {
    row.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}
