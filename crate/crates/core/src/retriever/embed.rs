//! Embedder abstraction with a deterministic hash-projection implementation
//! for offline tests and an HTTP client for real embedding endpoints.

use sha2::{Digest, Sha256};

use super::RetrieverError;

pub trait Embedder: Send + Sync {
    /// Embed `text` into a vector of `dimension()` components.
    fn embed(&self, text: &str) -> Vec<f64>;
    fn dimension(&self) -> usize;
    fn name(&self) -> &str {
        "embedder"
    }
}

/// Deterministic bag-of-words embedder: each lowercased alphanumeric token
/// is hashed into a signed bucket. Identical text always produces identical
/// vectors, on any platform, which is what the offline tests rely on.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dimension: 64 }
    }
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        for token in text
            .to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let digest = Sha256::digest(token.as_bytes());
            let bucket = u64::from_le_bytes(digest[..8].try_into().unwrap()) as usize
                % self.dimension;
            let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        v
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn name(&self) -> &str {
        "hash-projection"
    }
}

/// Client for an OpenAI-style `/embeddings` endpoint.
pub struct HttpEmbedder {
    endpoint: String,
    model: String,
    dimension: usize,
    auth_env: String,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        dimension: usize,
        auth_env: impl Into<String>,
    ) -> Result<Self, RetrieverError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(60))
            .build()
            .map_err(|e| RetrieverError::Storage(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            model: model.into(),
            dimension,
            auth_env: auth_env.into(),
            client,
        })
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, text: &str) -> Vec<f64> {
        let attempt = || -> Result<Vec<f64>, String> {
            let mut req = self
                .client
                .post(&self.endpoint)
                .json(&serde_json::json!({ "model": self.model, "input": text }));
            if let Ok(token) = std::env::var(&self.auth_env) {
                req = req.bearer_auth(token);
            }
            let body: serde_json::Value =
                req.send().map_err(|e| e.to_string())?.json().map_err(|e| e.to_string())?;
            let vector = body["data"][0]["embedding"]
                .as_array()
                .ok_or("missing data[0].embedding")?
                .iter()
                .map(|v| v.as_f64().unwrap_or(0.0))
                .collect::<Vec<_>>();
            if vector.len() != self.dimension {
                return Err(format!(
                    "endpoint returned dimension {}, expected {}",
                    vector.len(),
                    self.dimension
                ));
            }
            Ok(vector)
        };
        match attempt() {
            Ok(v) => v,
            Err(e) => {
                // A zero vector keeps the pipeline running but ranks last.
                eprintln!("warning: embedding request failed ({e}); using zero vector");
                vec![0.0; self.dimension]
            }
        }
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn name(&self) -> &str {
        "http-embeddings"
    }
}
