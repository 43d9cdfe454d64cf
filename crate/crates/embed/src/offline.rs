use appcat_core::hash::fnv1a64;

use crate::{Provider, Result};

pub const OFFLINE_DIM: usize = 256;
const MIN_GRAM: usize = 3;
const MAX_GRAM: usize = 5;

/// Signed feature hashing of character 3- to 5-grams into 256 buckets.
///
/// Bucket is `fnv1a64(gram) % 256`, sign is the hash's top bit. The result
/// is L2-normalized unless it is all zeros.
#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineEmbedder;

impl OfflineEmbedder {
    pub const ID: &'static str = "offline-ngram-fnv1a-256";

    pub fn embed(&self, text: &str) -> Vec<f32> {
        let chars: Vec<char> = text.chars().collect();
        let mut acc = vec![0f64; OFFLINE_DIM];
        let mut buf = String::new();
        for n in MIN_GRAM..=MAX_GRAM {
            for window in chars.windows(n) {
                buf.clear();
                buf.extend(window);
                let h = fnv1a64(buf.as_bytes());
                let bucket = (h % OFFLINE_DIM as u64) as usize;
                acc[bucket] += if h >> 63 == 1 { -1.0 } else { 1.0 };
            }
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            acc.iter_mut().for_each(|v| *v /= norm);
        }
        acc.into_iter().map(|v| v as f32).collect()
    }
}

impl Provider for OfflineEmbedder {
    fn id(&self) -> &str {
        Self::ID
    }

    fn batch_size(&self) -> usize {
        256
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        Ok(texts.iter().map(|t| self.embed(t)).collect())
    }
}
