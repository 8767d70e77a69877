//! Embedding providers and vector math.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::InFlightLimit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub dims: Vec<f64>,
    pub provider_id: String,
}

impl EmbeddingVector {
    pub fn new(dims: Vec<f64>, provider_id: impl Into<String>) -> Self {
        EmbeddingVector {
            dims,
            provider_id: provider_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.dims.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, c: f64) -> EmbeddingVector {
        EmbeddingVector::new(
            self.dims.iter().map(|x| x * c).collect(),
            self.provider_id.clone(),
        )
    }
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Retrieval(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Retrieval("cosine of a zero vector".into()));
    }
    let dot: f64 = a.dims.iter().zip(&b.dims).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub trait Embedder: Send + Sync {
    /// Tag stored alongside every vector this provider produces.
    fn id(&self) -> &str;
    fn dims(&self) -> usize;
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>>;

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector> {
        Ok(self.embed(&[text])?.remove(0))
    }
}

/// Deterministic feature-hashing embedder over word unigrams and bigrams.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dims: usize,
    id: String,
}

pub const DEFAULT_HASH_DIMS: usize = 256;

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_HASH_DIMS)
    }
}

impl HashingEmbedder {
    pub fn new(dims: usize) -> Self {
        assert!(dims > 0, "embedding dimension must be positive");
        HashingEmbedder {
            dims,
            id: format!("offline-hash-{dims}"),
        }
    }

    /// Raw (unnormalised) feature counts.
    pub fn features(&self, text: &str) -> Vec<f64> {
        let words = words(text);
        let mut v = vec![0.0; self.dims];
        for w in &words {
            v[bucket(w, self.dims)] += 1.0;
        }
        for pair in words.windows(2) {
            v[bucket(&format!("{} {}", pair[0], pair[1]), self.dims)] += 1.0;
        }
        v
    }
}

impl Embedder for HashingEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dims(&self) -> usize {
        self.dims
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(Error::Invalid("no texts to embed".into()));
        }
        Ok(texts
            .iter()
            .map(|t| {
                let mut v = self.features(t);
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    v.iter_mut().for_each(|x| *x /= norm);
                }
                EmbeddingVector::new(v, self.id.clone())
            })
            .collect())
    }
}

/// Lowercased words, split at non-alphanumerics, camelCase humps and
/// letter/digit boundaries.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split(|c: char| !c.is_alphanumeric()) {
        let chars: Vec<char> = chunk.chars().collect();
        let mut start = 0;
        for i in 1..chars.len() {
            let (p, c) = (chars[i - 1], chars[i]);
            let next_lower = chars.get(i + 1).is_some_and(|n| n.is_lowercase());
            let boundary = (p.is_lowercase() && c.is_uppercase())
                || (p.is_uppercase() && c.is_uppercase() && next_lower)
                || (p.is_alphabetic() && c.is_numeric())
                || (p.is_numeric() && c.is_alphabetic());
            if boundary {
                out.push(chars[start..i].iter().collect::<String>().to_lowercase());
                start = i;
            }
        }
        if start < chars.len() {
            out.push(chars[start..].iter().collect::<String>().to_lowercase());
        }
    }
    out
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn bucket(feature: &str, dims: usize) -> usize {
    (fnv1a64(feature.as_bytes()) % dims as u64) as usize
}

/// Settings for an OpenAI-compatible `/embeddings` endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveEmbedderConfig {
    pub endpoint: String,
    pub model: String,
    pub dims: usize,
    pub max_in_flight: usize,
    pub retries: u32,
    pub timeout_seconds: u64,
}

impl Default for LiveEmbedderConfig {
    fn default() -> Self {
        LiveEmbedderConfig {
            endpoint: "https://api.openai.com/v1/embeddings".into(),
            model: "text-embedding-004".into(),
            dims: 768,
            max_in_flight: 4,
            retries: 3,
            timeout_seconds: 60,
        }
    }
}

/// Environment variable holding the embedding provider key.
pub const EMBED_KEY_VAR: &str = "KQLFORGE_EMBED_KEY";

pub struct LiveEmbedder {
    config: LiveEmbedderConfig,
    key: String,
    client: reqwest::blocking::Client,
    limit: InFlightLimit,
    id: String,
}

#[derive(Deserialize)]
struct EmbeddingReply {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl LiveEmbedder {
    pub fn from_env(config: LiveEmbedderConfig) -> Result<Self> {
        let key = std::env::var(EMBED_KEY_VAR)
            .map_err(|_| Error::Config(format!("{EMBED_KEY_VAR} is not set")))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_seconds))
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(LiveEmbedder {
            id: format!("live:{}", config.model),
            limit: InFlightLimit::new(config.max_in_flight),
            config,
            key,
            client,
        })
    }

    fn attempt(&self, texts: &[&str]) -> std::result::Result<Vec<Vec<f64>>, (bool, String)> {
        let _permit = self.limit.acquire();
        let body = serde_json::json!({ "model": self.config.model, "input": texts });
        let resp = self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(&self.key)
            .json(&body)
            .send()
            .map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err((false, format!("HTTP {status}")));
        }
        if !status.is_success() {
            let retry =
                status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS;
            return Err((retry, format!("HTTP {status}")));
        }
        let reply: EmbeddingReply = resp.json().map_err(|e| (true, e.to_string()))?;
        Ok(reply.data.into_iter().map(|d| d.embedding).collect())
    }
}

impl Embedder for LiveEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dims(&self) -> usize {
        self.config.dims
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(Error::Invalid("no texts to embed".into()));
        }
        let attempts = self.config.retries.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.attempt(texts) {
                Ok(rows) => {
                    if rows.len() != texts.len() || rows.iter().any(|r| r.len() != self.config.dims)
                    {
                        return Err(Error::Config(format!(
                            "embedding provider returned unexpected shape (expected {} x {})",
                            texts.len(),
                            self.config.dims
                        )));
                    }
                    return Ok(rows
                        .into_iter()
                        .map(|r| EmbeddingVector::new(r, self.id.clone()))
                        .collect());
                }
                Err((false, cause)) => return Err(Error::Auth(cause)),
                Err((true, cause)) => {
                    log::warn!("embedding attempt {attempt}/{attempts} failed: {cause}");
                    last = cause;
                    if attempt < attempts {
                        std::thread::sleep(Duration::from_millis(250 << (attempt - 1)));
                    }
                }
            }
        }
        Err(Error::Backend {
            attempts,
            cause: last,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_splitting() {
        assert_eq!(
            words("DeviceNetworkEvents"),
            ["device", "network", "events"]
        );
        assert_eq!(words("Timestamp2"), ["timestamp", "2"]);
        assert_eq!(
            words("device_network events!"),
            ["device", "network", "events"]
        );
        assert_eq!(words("IPAddress"), ["ip", "address"]);
        assert!(words("  ").is_empty());
    }

    #[test]
    fn offline_is_deterministic_and_normalized() {
        let e = HashingEmbedder::default();
        let a = e.embed_one("device network events").unwrap();
        let b = e.embed_one("device network events").unwrap();
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-9);
        assert_eq!(a.len(), 256);
        assert_eq!(a.provider_id, "offline-hash-256");
    }

    #[test]
    fn cosine_closed_forms() {
        let v = |d: &[f64]| EmbeddingVector::new(d.to_vec(), "t");
        assert!((cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap()).abs() < 1e-12);
        assert!(
            (cosine(&v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap() - std::f64::consts::FRAC_1_SQRT_2)
                .abs()
                < 1e-12
        );
        let x = v(&[0.3, -2.0, 5.0]);
        assert!((cosine(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!(cosine(&v(&[1.0]), &v(&[1.0, 0.0])).is_err());
        assert!(cosine(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn casing_and_separators_do_not_matter() {
        let e = HashingEmbedder::default();
        let a = e.embed_one("DeviceId").unwrap();
        for other in ["DeviceID", "device_id", "DEVICE_ID", "Device Id"] {
            let b = e.embed_one(other).unwrap();
            assert!((cosine(&a, &b).unwrap() - 1.0).abs() < 1e-12, "{other}");
        }
    }
}
