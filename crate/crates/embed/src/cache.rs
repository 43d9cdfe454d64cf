//! Content-addressed embedding cache.
//!
//! Layout: `<root>/<provider>/<content-hash as 16 hex digits>.emb`, where
//! `<provider>` is the provider id with every character outside
//! `[A-Za-z0-9._-]` replaced by `_`. A record is
//!
//! ```text
//! b"AEMB" | version u8 = 1 | provider_id length u16 LE | provider_id bytes
//!         | dim u32 LE | dim x f32 LE
//! ```
//!
//! Writes go to a temporary file in the same directory and are renamed
//! into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use appcat_core::hash::fnv1a64;

use crate::{EmbedError, Result};

const MAGIC: &[u8; 4] = b"AEMB";
const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub provider_id: String,
    pub content_hash: u64,
}

impl CacheKey {
    pub fn new(provider_id: &str, text: &str) -> Self {
        Self {
            provider_id: provider_id.to_string(),
            content_hash: fnv1a64(text.as_bytes()),
        }
    }
}

#[derive(Debug)]
pub struct EmbeddingCache {
    root: PathBuf,
    tmp_counter: AtomicU64,
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect()
}

fn cache_err(path: &Path, message: impl ToString) -> EmbedError {
    EmbedError::Cache {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

impl EmbeddingCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| cache_err(&root, e))?;
        Ok(Self {
            root,
            tmp_counter: AtomicU64::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.root
            .join(sanitize(&key.provider_id))
            .join(format!("{:016x}.emb", key.content_hash))
    }

    pub fn encode(provider_id: &str, values: &[f32]) -> Vec<u8> {
        let id = provider_id.as_bytes();
        let mut out = Vec::with_capacity(4 + 1 + 2 + id.len() + 4 + 4 * values.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&(values.len() as u32).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Returns `(provider_id, values)`.
    pub fn decode(bytes: &[u8]) -> std::result::Result<(String, Vec<f32>), String> {
        let take = |at: usize, n: usize| bytes.get(at..at + n).ok_or_else(|| format!("truncated at byte {at}"));
        if take(0, 4)? != MAGIC {
            return Err("bad magic".into());
        }
        if take(4, 1)?[0] != VERSION {
            return Err("unsupported version".into());
        }
        let id_len = u16::from_le_bytes(take(5, 2)?.try_into().unwrap()) as usize;
        let id = String::from_utf8(take(7, id_len)?.to_vec()).map_err(|e| e.to_string())?;
        let at = 7 + id_len;
        let dim = u32::from_le_bytes(take(at, 4)?.try_into().unwrap()) as usize;
        let body = take(at + 4, dim.checked_mul(4).ok_or("dimension overflow")?)?;
        if bytes.len() != at + 4 + dim * 4 {
            return Err("trailing bytes".into());
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((id, values))
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<Vec<f32>>> {
        let path = self.path_for(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(cache_err(&path, e)),
        };
        let (id, values) = Self::decode(&bytes).map_err(|m| cache_err(&path, m))?;
        if id != key.provider_id {
            return Err(cache_err(&path, format!("record belongs to provider `{id}`")));
        }
        Ok(Some(values))
    }

    pub fn put(&self, key: &CacheKey, values: &[f32]) -> Result<()> {
        let path = self.path_for(key);
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir).map_err(|e| cache_err(dir, e))?;
        let tmp = dir.join(format!(
            ".{:016x}.{}.{}.tmp",
            key.content_hash,
            std::process::id(),
            self.tmp_counter.fetch_add(1, Ordering::Relaxed)
        ));
        let mut f = fs::File::create(&tmp).map_err(|e| cache_err(&tmp, e))?;
        f.write_all(&Self::encode(&key.provider_id, values))
            .and_then(|_| f.sync_all())
            .map_err(|e| cache_err(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| cache_err(&path, e))
    }
}
