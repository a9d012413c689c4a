//! Text embeddings and cosine similarity.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("embedding service unreachable: {0}")]
    Transport(String),
    #[error("malformed embedding payload: {0}")]
    Protocol(String),
}

/// A dense embedding. The dimension is the vector length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::Input("embedding has no components".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::Input("embedding has non-finite components".into()));
        }
        Ok(Self(values))
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().fold(0.0, |acc, v| acc + v * v).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }
}

/// Cosine similarity, clamped to [-1, 1]. Sums run left to right so the
/// result is exactly symmetric.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dimension() != b.dimension() {
        return Err(EmbedError::Input(format!(
            "dimension mismatch: {} vs {}",
            a.dimension(),
            b.dimension()
        )));
    }
    if a.is_zero() || b.is_zero() {
        return Err(EmbedError::Input("cosine similarity of a zero vector".into()));
    }
    let dot = a.0.iter().zip(&b.0).fold(0.0, |acc, (x, y)| acc + x * y);
    Ok((dot / (a.norm() * b.norm())).clamp(-1.0, 1.0))
}

#[async_trait::async_trait]
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;

    /// Identifier persisted with experience pools built by this embedder.
    fn id(&self) -> String;

    async fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
}

fn require_text(text: &str) -> Result<(), EmbedError> {
    if text.trim().is_empty() {
        Err(EmbedError::Input("cannot embed empty text".into()))
    } else {
        Ok(())
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET ^ seed.wrapping_mul(FNV_PRIME);
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Deterministic feature-hashing embedder over word unigrams and bigrams,
/// L2-normalized. Needs no model and is stable across platforms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashEmbedder {
    dimension: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Result<Self, EmbedError> {
        if dimension == 0 {
            return Err(EmbedError::Input("dimension must be positive".into()));
        }
        Ok(Self { dimension, seed })
    }

    fn tokens(text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect()
    }

    fn add_feature(&self, acc: &mut [f64], feature: &str) {
        let h = fnv1a(self.seed, feature.as_bytes());
        let slot = (h % self.dimension as u64) as usize;
        let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
        acc[slot] += sign;
    }

    pub fn embed_sync(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        require_text(text)?;
        let mut acc = vec![0.0; self.dimension];
        let tokens = Self::tokens(text);
        if tokens.is_empty() {
            // punctuation-only input still gets a deterministic vector
            self.add_feature(&mut acc, &format!("raw:{}", text.trim()));
        }
        for t in &tokens {
            self.add_feature(&mut acc, &format!("u:{t}"));
        }
        for pair in tokens.windows(2) {
            self.add_feature(&mut acc, &format!("b:{} {}", pair[0], pair[1]));
        }
        if acc.iter().all(|v| *v == 0.0) {
            // features cancelled out; fall back to the whole text
            self.add_feature(&mut acc, &format!("raw:{}", text.trim()));
        }
        let norm = acc.iter().fold(0.0, |s, v| s + v * v).sqrt();
        EmbeddingVector::new(acc.into_iter().map(|v| v / norm).collect())
    }
}

#[async_trait::async_trait]
impl Embedder for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn id(&self) -> String {
        format!("hash-ngram:{}:{}", self.dimension, self.seed)
    }

    async fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        self.embed_sync(text)
    }
}

/// Client for an OpenAI-style `/embeddings` service, e.g. an e5-large
/// deployment behind a text-embeddings server.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    client: reqwest::Client,
    url: String,
    model: String,
    dimension: usize,
    prefix: String,
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>, model: impl Into<String>, dimension: usize, timeout: Duration) -> Result<Self, EmbedError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            url: url.into(),
            model: model.into(),
            dimension,
            prefix: String::new(),
        })
    }

    /// Text prepended to every input (e5 models expect `"query: "`).
    pub fn with_prefix(mut self, prefix: impl Into<String>) -> Self {
        self.prefix = prefix.into();
        self
    }
}

#[async_trait::async_trait]
impl Embedder for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn id(&self) -> String {
        format!("http:{}:{}", self.model, self.dimension)
    }

    async fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        require_text(text)?;
        let body = json!({"model": self.model, "input": [format!("{}{}", self.prefix, text)]});
        let response = self
            .client
            .post(&self.url)
            .json(&body)
            .send()
            .await
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        let status = response.status();
        let payload: Value = response.json().await.map_err(|e| EmbedError::Protocol(e.to_string()))?;
        if !status.is_success() {
            return Err(EmbedError::Transport(format!("HTTP {status}: {payload}")));
        }
        let values: Vec<f64> = payload
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| EmbedError::Protocol("missing data[0].embedding".into()))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| EmbedError::Protocol(format!("non-numeric component {v}"))))
            .collect::<Result<_, _>>()?;
        if values.len() != self.dimension {
            return Err(EmbedError::Protocol(format!(
                "expected {} components, got {}",
                self.dimension,
                values.len()
            )));
        }
        EmbeddingVector::new(values).map_err(|e| EmbedError::Protocol(e.to_string()))
    }
}
