//! Text embedders.
//!
//! Every stored vector is L2-normalized at write time, so similarity
//! between two [`EmbeddingVector`]s is a plain dot product.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dimension of the default embedder.
pub const DEFAULT_DIM: usize = 384;

/// Seed of the default embedder. Changing it changes every stored vector.
pub const DEFAULT_SEED: u64 = 0x5eed_c0de_2024_0601;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("text at index {index} is empty")]
    EmptyText { index: usize },
    #[error("embedding has non-finite or zero-norm components")]
    Degenerate,
    #[error("expected dimension {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("embedding backend failed: {0}")]
    Backend(String),
}

/// A unit-length vector of finite `f32` components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Normalizes `values` to unit length.
    pub fn normalized(values: Vec<f32>) -> Result<Self, EmbedError> {
        let norm = values.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(EmbedError::Degenerate);
        }
        let values = values.into_iter().map(|x| (f64::from(x) / norm) as f32).collect();
        Ok(Self(values))
    }

    /// Wraps values read back from storage, which were normalized when
    /// first written.
    pub(crate) fn from_stored(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f32 {
        dot(&self.0, &other.0)
    }
}

/// Dot product with eight independent accumulators, summed in a fixed
/// order. Every similarity in the system goes through this function, so
/// scores for the same pair of rows are bit-identical everywhere.
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f32; 8];
    let chunks_a = a.chunks_exact(8);
    let chunks_b = b.chunks_exact(8);
    let tail: f32 = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for j in 0..8 {
            acc[j] += ca[j] * cb[j];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    /// Embeds one non-empty text. Must be deterministic.
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
}

/// Embeds every text in order. Fails on the first empty text, naming its
/// index, before any embedding work is done.
pub fn embed_batch<S: AsRef<str>>(
    embedder: &dyn Embedder,
    texts: &[S],
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    if let Some(index) = texts.iter().position(|t| t.as_ref().trim().is_empty()) {
        return Err(EmbedError::EmptyText { index });
    }
    texts
        .iter()
        .map(|t| {
            let v = embedder.embed(t.as_ref())?;
            if v.dim() != embedder.dim() {
                return Err(EmbedError::Dimension {
                    expected: embedder.dim(),
                    actual: v.dim(),
                });
            }
            Ok(v)
        })
        .collect()
}

/// Seeded random projection of a bag of words.
///
/// Each distinct lowercase alphanumeric token is mapped through a seeded
/// hash to a dense Gaussian direction in `dim` dimensions; the text vector
/// is the term-frequency weighted sum of its tokens' directions, then
/// normalized. Inner products of these vectors approximate the cosine of
/// the underlying term-frequency vectors.
#[derive(Debug, Clone)]
pub struct HashedProjectionEmbedder {
    dim: usize,
    seed: u64,
}

impl Default for HashedProjectionEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM, DEFAULT_SEED)
    }
}

impl HashedProjectionEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, seed }
    }

    fn accumulate_token(&self, token: &str, weight: f32, out: &mut [f32]) {
        let mut state = fnv1a(token.as_bytes()) ^ self.seed;
        let mut i = 0;
        while i < out.len() {
            // Box-Muller: two uniforms give two independent normals.
            let u1 = unit_open(splitmix64(&mut state));
            let u2 = unit_open(splitmix64(&mut state));
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = std::f64::consts::TAU * u2;
            out[i] += weight * (r * theta.cos()) as f32;
            if i + 1 < out.len() {
                out[i + 1] += weight * (r * theta.sin()) as f32;
            }
            i += 2;
        }
    }
}

impl Embedder for HashedProjectionEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(EmbedError::EmptyText { index: 0 });
        }
        let mut counts: BTreeMap<String, u32> = BTreeMap::new();
        for token in trimmed.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            *counts.entry(token.to_lowercase()).or_default() += 1;
        }
        if counts.is_empty() {
            // Punctuation-only text still gets a stable direction.
            counts.insert(trimmed.to_string(), 1);
        }
        let mut values = vec![0f32; self.dim];
        for (token, count) in &counts {
            self.accumulate_token(token, *count as f32, &mut values);
        }
        EmbeddingVector::normalized(values)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform in (0, 1], never zero so `ln` stays finite.
fn unit_open(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 1.0) / (1u64 << 53) as f64
}

/// Counts calls to an inner embedder.
#[derive(Debug)]
pub struct CountingEmbedder<E> {
    inner: E,
    calls: AtomicU64,
}

impl<E: Embedder> CountingEmbedder<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }
}

impl<E: Embedder> Embedder for CountingEmbedder<E> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.embed(text)
    }
}

/// Client for an OpenAI-compatible `/embeddings` endpoint.
pub struct RemoteEmbedder {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: Option<String>,
    dim: usize,
}

impl RemoteEmbedder {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>, dim: usize) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .expect("http client");
        Self {
            client,
            url: format!("{}/embeddings", base_url.trim_end_matches('/')),
            model: model.to_string(),
            api_key,
            dim,
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText { index: 0 });
        }
        let mut req = self
            .client
            .post(&self.url)
            .json(&serde_json::json!({ "model": self.model, "input": text }));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let body: serde_json::Value = req
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(|e| EmbedError::Backend(e.to_string()))?;
        let values: Vec<f32> = body["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| EmbedError::Backend("response has no embedding".into()))?
            .iter()
            .map(|v| v.as_f64().unwrap_or(f64::NAN) as f32)
            .collect();
        if values.len() != self.dim {
            return Err(EmbedError::Dimension {
                expected: self.dim,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::Degenerate);
        }
        EmbeddingVector::normalized(values)
    }
}
