//! Text embedding providers behind one contract.
//!
//! * [`OfflineEmbedder`]: deterministic signed feature hashing of character
//!   n-grams, no network.
//! * [`RemoteEmbedder`]: HTTP JSON embedding endpoint (OpenAI-compatible),
//!   batched, retried and rate-limit aware.
//!
//! [`embed_texts`] deduplicates inputs, consults an [`EmbeddingCache`]
//! before calling the provider, and writes fresh vectors back.

mod cache;
mod offline;
mod remote;

use std::collections::HashMap;

use thiserror::Error;

pub use cache::{CacheKey, EmbeddingCache};
pub use offline::{OfflineEmbedder, OFFLINE_DIM};
pub use remote::{
    truncate_to_token_limit, HttpResponse, RemoteConfig, RemoteEmbedder, Transport, UreqTransport,
    REMOTE_DEFAULT_DIM,
};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("credential missing: environment variable `{0}` is not set")]
    CredentialMissing(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },
    #[error("embedding endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    Response(String),
    #[error("dimension mismatch: expected {expected}, provider returned {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in embedding from `{0}`")]
    NonFinite(String),
    #[error("cache error at {path}: {message}")]
    Cache { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, EmbedError>;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub provider_id: String,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let dot: f64 = self.values.iter().zip(&other.values).map(|(&a, &b)| a as f64 * b as f64).sum();
        let na: f64 = self.values.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = other.values.iter().map(|&b| (b as f64).powi(2)).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }
}

/// An embedding backend.
pub trait Provider: Sync {
    /// Stable identifier; part of every cache key.
    fn id(&self) -> &str;
    /// Largest number of texts sent in one request.
    fn batch_size(&self) -> usize;
    /// Simultaneous requests allowed.
    fn max_in_flight(&self) -> usize {
        1
    }
    /// One vector per input, same order.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>>;
}

/// Embeds `texts` in order. Duplicate strings are embedded once; cached
/// strings never reach the provider.
pub fn embed_texts<S: AsRef<str>>(
    texts: &[S],
    provider: &dyn Provider,
    cache: Option<&EmbeddingCache>,
) -> Result<Vec<EmbeddingVector>> {
    let mut distinct: Vec<&str> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for t in texts {
        let t = t.as_ref();
        if !slot.contains_key(t) {
            slot.insert(t, distinct.len());
            distinct.push(t);
        }
    }

    let mut vectors: Vec<Option<Vec<f32>>> = vec![None; distinct.len()];
    if let Some(cache) = cache {
        for (i, t) in distinct.iter().enumerate() {
            vectors[i] = cache.get(&CacheKey::new(provider.id(), t))?;
        }
    }
    let missing: Vec<usize> = (0..distinct.len()).filter(|&i| vectors[i].is_none()).collect();
    let batches: Vec<&[usize]> = missing.chunks(provider.batch_size().max(1)).collect();
    let wave = provider.max_in_flight().max(1);
    for group in batches.chunks(wave) {
        let results: Vec<Result<Vec<Vec<f32>>>> = std::thread::scope(|s| {
            let handles: Vec<_> = group
                .iter()
                .map(|batch| {
                    let inputs: Vec<String> = batch.iter().map(|&i| distinct[i].to_string()).collect();
                    s.spawn(move || provider.embed_batch(&inputs))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("embedding worker")).collect()
        });
        for (batch, result) in group.iter().zip(results) {
            let out = result?;
            if out.len() != batch.len() {
                return Err(EmbedError::Response(format!(
                    "{} vectors for {} inputs",
                    out.len(),
                    batch.len()
                )));
            }
            for (&i, v) in batch.iter().zip(out) {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(EmbedError::NonFinite(provider.id().to_string()));
                }
                if let Some(cache) = cache {
                    cache.put(&CacheKey::new(provider.id(), distinct[i]), &v)?;
                }
                vectors[i] = Some(v);
            }
        }
    }

    Ok(texts
        .iter()
        .map(|t| EmbeddingVector {
            values: vectors[slot[t.as_ref()]].clone().expect("every distinct text embedded"),
            provider_id: provider.id().to_string(),
        })
        .collect())
}
