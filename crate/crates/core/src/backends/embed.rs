use std::time::Duration;

use serde_json::{json, Value};

use super::remote::{api_key, endpoint_url};
use super::BackendSpec;
use crate::error::{Error, Result};

pub trait Embedder: Send + Sync {
    fn embedder_id(&self) -> &str;
    fn dimension(&self) -> usize;
    /// One L2-normalized vector per input text.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

pub const MOCK_EMBEDDING_DIM: usize = 1 << 14;

/// Deterministic bag-of-tokens embedder: lowercase tokens split on whitespace and
/// punctuation, hashed into a fixed number of buckets, counted and normalized.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self {
            dim: MOCK_EMBEDDING_DIM,
        }
    }
}

fn fnv1a(token: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in token.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

impl MockEmbedder {
    pub fn with_dimension(dim: usize) -> Self {
        assert!(dim > 0);
        Self { dim }
    }

    pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(|t| t.to_lowercase())
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for t in Self::tokens(text) {
            v[(fnv1a(&t) % self.dim as u64) as usize] += 1.0;
        }
        normalize(&mut v);
        v
    }
}

impl Embedder for MockEmbedder {
    fn embedder_id(&self) -> &str {
        "mock-bag-of-tokens"
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        if texts.is_empty() {
            return Err(Error::backend("mock-embedder", "no texts to embed"));
        }
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Cosine similarity of two vectors, clamped to [-1, 1]. Zero vectors give 0.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    if a == b && a.iter().any(|x| *x != 0.0) {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Embeddings over HTTP: POST `{model, input: [...]}` to `<endpoint>/embeddings`,
/// reading `data[i].embedding`.
pub struct RemoteEmbedder {
    spec: BackendSpec,
    dim: usize,
    client: reqwest::blocking::Client,
    url: String,
}

impl RemoteEmbedder {
    pub fn new(spec: BackendSpec, dim: usize) -> Result<Self> {
        spec.validate()?;
        let endpoint = spec.endpoint.clone().unwrap_or_default();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(spec.timeout_secs))
            .build()
            .map_err(|e| Error::backend(&spec.backend_id, e.to_string()))?;
        Ok(Self {
            url: endpoint_url(&endpoint, "embeddings"),
            spec,
            dim,
            client,
        })
    }
}

pub(crate) fn parse_embeddings(body: &Value, expected: usize, dim: usize) -> std::result::Result<Vec<Vec<f64>>, String> {
    let data = body["data"].as_array().ok_or("response has no data array")?;
    if data.len() != expected {
        return Err(format!("expected {expected} embeddings, got {}", data.len()));
    }
    let mut rows: Vec<(usize, Vec<f64>)> = data
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let idx = item["index"].as_u64().map(|x| x as usize).unwrap_or(i);
            let v: Option<Vec<f64>> = item["embedding"]
                .as_array()
                .map(|a| a.iter().filter_map(|x| x.as_f64()).collect());
            (idx, v.unwrap_or_default())
        })
        .collect();
    rows.sort_by_key(|(i, _)| *i);
    rows.into_iter()
        .map(|(_, mut v)| {
            if v.len() != dim {
                return Err(format!("embedding has dimension {}, expected {dim}", v.len()));
            }
            normalize(&mut v);
            Ok(v)
        })
        .collect()
}

impl Embedder for RemoteEmbedder {
    fn embedder_id(&self) -> &str {
        &self.spec.backend_id
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        if texts.is_empty() {
            return Err(Error::backend(&self.spec.backend_id, "no texts to embed"));
        }
        let key = api_key(&self.spec)?;
        let body = json!({"model": self.spec.model_name, "input": texts});
        let mut last = String::new();
        for attempt in 0..=self.spec.max_retries {
            let result = self
                .client
                .post(&self.url)
                .bearer_auth(&key)
                .json(&body)
                .send()
                .and_then(|r| r.error_for_status())
                .and_then(|r| r.json::<Value>());
            match result {
                Ok(v) => {
                    return parse_embeddings(&v, texts.len(), self.dim)
                        .map_err(|m| Error::backend(&self.spec.backend_id, m))
                }
                Err(e) => last = e.to_string(),
            }
            if attempt < self.spec.max_retries {
                std::thread::sleep(Duration::from_millis(
                    self.spec.initial_backoff_ms.saturating_mul(1 << attempt.min(10)),
                ));
            }
        }
        Err(Error::TransportError {
            backend_id: self.spec.backend_id.clone(),
            attempts: self.spec.max_retries + 1,
            message: last,
        })
    }
}
