//! Token embedding providers backing the similarity-based score.
//!
//! Every provider upholds one contract: `embed` returns exactly one vector
//! per input token, each of length [`EmbeddingProvider::dim`] and unit L2
//! norm (within `1e-9`), and the same token always maps to the same vector
//! for the lifetime of the provider. The scoring layer relies on all three
//! properties, so [`HttpEmbedding`] validates them on every reply rather
//! than trusting the remote service.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

/// Tolerance for the unit-norm check on provider output.
pub const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    /// The transport failed: connection refused, timeout, non-2xx status.
    #[error("embedding request failed: {0}")]
    Request(String),
    /// The service answered but the payload violates the contract.
    #[error("embedding protocol violation: {0}")]
    Protocol(String),
    /// A fixed-capacity provider ran out of distinct-token slots.
    #[error("embedding capacity exhausted: {needed} distinct tokens exceed dimension {dim}")]
    Capacity { dim: usize, needed: usize },
}

/// Source of per-token vectors. Implementations must be thread-safe: the
/// scoring stage shares one provider across worker threads.
pub trait EmbeddingProvider: Send + Sync {
    /// Vector length; constant for the lifetime of the provider.
    fn dim(&self) -> usize;

    /// Embeds each token, preserving order. `tokens.len()` vectors come
    /// back, each `dim()` long with unit L2 norm.
    fn embed(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError>;
}

/// Deterministic offline provider: each token's vector is drawn from a
/// ChaCha20 stream seeded with the SHA-256 of the token, then normalized.
/// Components are sampled from [0, 1), so any two vectors have non-negative
/// cosine similarity — unrelated tokens score near the random-overlap
/// baseline instead of oscillating around zero.
pub struct HashEmbedding {
    dim: usize,
    cache: Mutex<HashMap<String, Vec<f64>>>,
}

impl HashEmbedding {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn vector_for(&self, token: &str) -> Vec<f64> {
        let digest = Sha256::digest(token.as_bytes());
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = rand_chacha::ChaCha20Rng::from_seed(seed);
        let mut v: Vec<f64> = (0..self.dim)
            .map(|_| (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64))
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Unreachable in practice (all 53-bit draws zero), but the unit
            // norm contract must hold unconditionally.
            v[0] = 1.0;
        } else {
            for x in &mut v {
                *x /= norm;
            }
        }
        v
    }
}

impl EmbeddingProvider for HashEmbedding {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        let mut cache = self.cache.lock().expect("embedding cache poisoned");
        Ok(tokens
            .iter()
            .map(|t| {
                cache
                    .entry(t.clone())
                    .or_insert_with(|| self.vector_for(t))
                    .clone()
            })
            .collect())
    }
}

/// Test-oriented provider assigning each distinct token the next standard
/// basis vector, so cosine similarity is exactly 1 for equal tokens and 0
/// otherwise. The similarity score then reduces to a closed-form quantity
/// that independent test oracles can compute. Fails once more than `dim`
/// distinct tokens are seen.
pub struct OrthogonalEmbedding {
    dim: usize,
    registry: Mutex<HashMap<String, usize>>,
}

impl OrthogonalEmbedding {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            registry: Mutex::new(HashMap::new()),
        }
    }
}

impl EmbeddingProvider for OrthogonalEmbedding {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        let mut registry = self.registry.lock().expect("embedding registry poisoned");
        let mut out = Vec::with_capacity(tokens.len());
        for t in tokens {
            let next = registry.len();
            let axis = *registry.entry(t.clone()).or_insert(next);
            if axis >= self.dim {
                return Err(EmbeddingError::Capacity {
                    dim: self.dim,
                    needed: registry.len(),
                });
            }
            let mut v = vec![0.0; self.dim];
            v[axis] = 1.0;
            out.push(v);
        }
        Ok(out)
    }
}

/// Client for an external embedding service speaking a two-endpoint JSON
/// protocol:
///
/// * `GET {base}/capabilities` → `{"dim": N}`
/// * `POST {base}/embed` with `{"tokens": ["…", …]}` → `{"vectors": [[…], …]}`
///
/// Replies are validated against the provider contract (vector count,
/// dimension, unit norm) and rejected with a protocol error on any mismatch.
pub struct HttpEmbedding {
    base_url: String,
    dim: usize,
    agent: ureq::Agent,
}

#[derive(serde::Deserialize)]
struct CapabilitiesReply {
    dim: usize,
}

#[derive(serde::Serialize)]
struct EmbedRequest<'a> {
    tokens: &'a [String],
}

#[derive(serde::Deserialize)]
struct EmbedReply {
    vectors: Vec<Vec<f64>>,
}

impl HttpEmbedding {
    /// Connects and fetches the service's vector dimension. The default
    /// request timeout is 30 seconds; see [`HttpEmbedding::with_timeout`].
    pub fn new(base_url: &str) -> Result<Self, EmbeddingError> {
        Self::with_timeout(base_url, Duration::from_secs(30))
    }

    pub fn with_timeout(base_url: &str, timeout: Duration) -> Result<Self, EmbeddingError> {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        let base_url = base_url.trim_end_matches('/').to_string();
        let url = format!("{base_url}/capabilities");
        let reply: CapabilitiesReply = agent
            .get(&url)
            .call()
            .map_err(|e| EmbeddingError::Request(format!("GET {url}: {e}")))?
            .into_json()
            .map_err(|e| EmbeddingError::Protocol(format!("bad capabilities reply: {e}")))?;
        if reply.dim == 0 {
            return Err(EmbeddingError::Protocol(
                "service reports dimension 0".into(),
            ));
        }
        Ok(Self {
            base_url,
            dim: reply.dim,
            agent,
        })
    }
}

impl EmbeddingProvider for HttpEmbedding {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        let url = format!("{}/embed", self.base_url);
        let reply: EmbedReply = self
            .agent
            .post(&url)
            .send_json(EmbedRequest { tokens })
            .map_err(|e| EmbeddingError::Request(format!("POST {url}: {e}")))?
            .into_json()
            .map_err(|e| EmbeddingError::Protocol(format!("bad embed reply: {e}")))?;
        if reply.vectors.len() != tokens.len() {
            return Err(EmbeddingError::Protocol(format!(
                "asked for {} vectors, got {}",
                tokens.len(),
                reply.vectors.len()
            )));
        }
        for (i, v) in reply.vectors.iter().enumerate() {
            if v.len() != self.dim {
                return Err(EmbeddingError::Protocol(format!(
                    "vector {i} has dimension {}, service declared {}",
                    v.len(),
                    self.dim
                )));
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(EmbeddingError::Protocol(format!(
                    "vector {i} has L2 norm {norm}, expected 1"
                )));
            }
        }
        Ok(reply.vectors)
    }
}
