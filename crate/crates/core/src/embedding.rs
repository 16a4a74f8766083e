//! Context embeddings, cosine similarity and embedding providers.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::fnv1a64;

/// Smallest dimension accepted by [`hashed_featurize`].
pub const MIN_HASHED_DIM: usize = 8;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero-norm vector cannot be compared")]
    ZeroNorm,
    #[error("embedding contains a non-finite value")]
    NonFinite,
    #[error("embedding must have at least one dimension")]
    Empty,
    #[error("hashed featurizer needs dim >= {MIN_HASHED_DIM}, got {0}")]
    DimTooSmall(usize),
    #[error("no precomputed embedding for text {0:?}")]
    UnknownText(String),
    #[error("embedding service error: {0}")]
    Service(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// A fixed-length real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Whether the vector can take part in a similarity computation.
    pub fn is_usable(&self) -> bool {
        self.norm() > 0.0
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

/// `a·b / (‖a‖‖b‖)`, clamped to `[-1, 1]` against rounding.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Source of context embeddings. Implementations must be deterministic:
/// equal text gives an identical vector.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError>;
}

/// Signed character-trigram feature hashing, L2-normalized.
///
/// The text is lowercased and wrapped in boundary markers so that every
/// non-empty string has at least one trigram. Each trigram is hashed with
/// FNV-1a (seeded); the low bits pick the bucket and the top bit the sign.
/// Empty text yields the all-zero vector, which [`EmbeddingVector::is_usable`]
/// reports as unusable. If signed collisions cancel to zero, unsigned counts
/// are used instead so non-empty text always has unit norm.
pub fn hashed_featurize(text: &str, dim: usize, seed: u64) -> Result<EmbeddingVector, EmbeddingError> {
    if dim < MIN_HASHED_DIM {
        return Err(EmbeddingError::DimTooSmall(dim));
    }
    if text.is_empty() {
        return Ok(EmbeddingVector::zeros(dim));
    }
    let chars: Vec<char> = std::iter::once('\u{2}')
        .chain(text.to_lowercase().chars())
        .chain(std::iter::once('\u{3}'))
        .collect();
    let mut signed = vec![0.0; dim];
    let mut unsigned = vec![0.0; dim];
    let mut buf = [0u8; 12];
    for window in chars.windows(3) {
        let mut len = 0;
        for c in window {
            len += c.encode_utf8(&mut buf[len..]).len();
        }
        let h = fnv1a64(&buf[..len], seed);
        let bucket = (h % dim as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        signed[bucket] += sign;
        unsigned[bucket] += 1.0;
    }
    let mut values = if signed.iter().any(|&v| v != 0.0) {
        signed
    } else {
        unsigned
    };
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    values.iter_mut().for_each(|v| *v /= norm);
    Ok(EmbeddingVector(values))
}

/// Offline provider backed by [`hashed_featurize`].
#[derive(Debug, Clone)]
pub struct HashedFeaturizer {
    dim: usize,
    seed: u64,
}

impl HashedFeaturizer {
    pub fn new(dim: usize, seed: u64) -> Result<Self, EmbeddingError> {
        if dim < MIN_HASHED_DIM {
            return Err(EmbeddingError::DimTooSmall(dim));
        }
        Ok(Self { dim, seed })
    }
}

impl EmbeddingProvider for HashedFeaturizer {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        hashed_featurize(text, self.dim, self.seed)
    }
}

/// Lookup table of vectors computed elsewhere, keyed by exact text.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedEmbeddings {
    dim: usize,
    table: HashMap<String, EmbeddingVector>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PrecomputedRecord {
    text: String,
    vector: Vec<f64>,
}

impl PrecomputedEmbeddings {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            table: HashMap::new(),
        }
    }

    pub fn insert(&mut self, text: impl Into<String>, vector: EmbeddingVector) -> Result<(), EmbeddingError> {
        if vector.dim() != self.dim {
            return Err(EmbeddingError::DimensionMismatch {
                left: self.dim,
                right: vector.dim(),
            });
        }
        self.table.insert(text.into(), vector);
        Ok(())
    }

    /// Read `{"text": .., "vector": [..]}` lines.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        let reader = BufReader::new(File::open(path)?);
        let mut out: Option<Self> = None;
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: PrecomputedRecord = serde_json::from_str(&line)
                .map_err(|e| EmbeddingError::Service(format!("bad embedding record: {e}")))?;
            let v = EmbeddingVector::new(rec.vector)?;
            out.get_or_insert_with(|| Self::new(v.dim())).insert(rec.text, v)?;
        }
        out.ok_or(EmbeddingError::Empty)
    }
}

impl EmbeddingProvider for PrecomputedEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| EmbeddingError::UnknownText(text.to_string()))
    }
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Client for an embedding service speaking
/// `POST {"texts": [...]}` → `{"vectors": [[...], ...]}`.
#[derive(Debug)]
pub struct HttpEmbeddingProvider {
    url: String,
    dim: usize,
    client: reqwest::blocking::Client,
}

impl HttpEmbeddingProvider {
    pub fn new(url: impl Into<String>, dim: usize, timeout: Duration) -> Result<Self, EmbeddingError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EmbeddingError::Service(e.to_string()))?;
        Ok(Self {
            url: url.into(),
            dim,
            client,
        })
    }

    pub fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let resp = self
            .client
            .post(&self.url)
            .json(&EmbedRequest { texts })
            .send()
            .map_err(|e| EmbeddingError::Service(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(EmbeddingError::Service(format!("status {status}")));
        }
        let body: EmbedResponse = resp
            .json()
            .map_err(|e| EmbeddingError::Service(format!("bad response body: {e}")))?;
        if body.vectors.len() != texts.len() {
            return Err(EmbeddingError::Service(format!(
                "{} vectors returned for {} texts",
                body.vectors.len(),
                texts.len()
            )));
        }
        body.vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(EmbeddingError::DimensionMismatch {
                        left: self.dim,
                        right: v.len(),
                    });
                }
                EmbeddingVector::new(v)
            })
            .collect()
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let mut v = self.embed_batch(&[text])?;
        Ok(v.remove(0))
    }
}
