//! OpenAI-compatible `POST {base_url}/embeddings` client.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::Deserialize;

use crate::{EmbedError, Provider, Result};

pub const REMOTE_DEFAULT_DIM: usize = 1536;
const CHARS_PER_TOKEN: usize = 4;
const MAX_RESPONSE_BYTES: u64 = 256 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub dim: usize,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub max_attempts: usize,
    /// First retry waits this long; each further retry doubles it.
    pub backoff_base: Duration,
    pub max_backoff: Duration,
    pub timeout: Duration,
    pub max_input_tokens: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "text-embedding-ada-002".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            dim: REMOTE_DEFAULT_DIM,
            batch_size: 64,
            max_in_flight: 4,
            max_attempts: 5,
            backoff_base: Duration::from_secs(1),
            max_backoff: Duration::from_secs(60),
            timeout: Duration::from_secs(60),
            max_input_tokens: 8192,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status: u16,
    /// Parsed `Retry-After` header, seconds form only.
    pub retry_after: Option<Duration>,
    pub body: String,
}

/// One HTTP exchange. `Err` is a transport-level failure (connect, read,
/// timeout); HTTP error statuses come back as `Ok`.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, bearer: &str, body: &str) -> std::result::Result<HttpResponse, String>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .new_agent();
        Self { agent }
    }
}

impl Transport for UreqTransport {
    fn post_json(&self, url: &str, bearer: &str, body: &str) -> std::result::Result<HttpResponse, String> {
        let mut resp = self
            .agent
            .post(url)
            .header("Authorization", format!("Bearer {bearer}"))
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let body = resp
            .body_mut()
            .with_config()
            .limit(MAX_RESPONSE_BYTES)
            .read_to_string()
            .map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, retry_after, body })
    }
}

/// Shortens `text` so its estimated token count (`ceil(chars / 4)`) does
/// not exceed `max_tokens`. Returns the input unchanged when it fits.
pub fn truncate_to_token_limit(text: &str, max_tokens: usize) -> &str {
    let max_chars = max_tokens.saturating_mul(CHARS_PER_TOKEN);
    match text.char_indices().nth(max_chars) {
        Some((byte, _)) => &text[..byte],
        None => text,
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
    #[serde(default)]
    index: Option<usize>,
}

pub struct RemoteEmbedder {
    config: RemoteConfig,
    api_key: String,
    id: String,
    transport: Box<dyn Transport>,
    requests: AtomicUsize,
    sleeper: fn(Duration),
}

impl std::fmt::Debug for RemoteEmbedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteEmbedder")
            .field("id", &self.id)
            .field("base_url", &self.config.base_url)
            .field("requests", &self.request_count())
            .finish()
    }
}

impl RemoteEmbedder {
    /// Reads the credential from `config.api_key_env`.
    pub fn from_env(config: RemoteConfig) -> Result<Self> {
        let key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| EmbedError::CredentialMissing(config.api_key_env.clone()))?;
        let transport = Box::new(UreqTransport::new(config.timeout));
        Ok(Self::with_transport(config, key, transport))
    }

    pub fn with_transport(config: RemoteConfig, api_key: String, transport: Box<dyn Transport>) -> Self {
        Self {
            id: format!("remote:{}", config.model),
            config,
            api_key,
            transport,
            requests: AtomicUsize::new(0),
            sleeper: std::thread::sleep,
        }
    }

    /// HTTP requests issued so far, retries included.
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn backoff(&self, attempt: usize, hint: Option<Duration>) -> Duration {
        let exp = self
            .config
            .backoff_base
            .saturating_mul(1u32 << attempt.min(20) as u32);
        hint.unwrap_or(exp).max(exp.min(self.config.max_backoff)).min(self.config.max_backoff)
    }

    fn parse(&self, body: &str, expected: usize) -> Result<Vec<Vec<f32>>> {
        let resp: EmbeddingResponse =
            serde_json::from_str(body).map_err(|e| EmbedError::Response(e.to_string()))?;
        if resp.data.len() != expected {
            return Err(EmbedError::Response(format!(
                "{} embeddings for {expected} inputs",
                resp.data.len()
            )));
        }
        let mut out: Vec<Option<Vec<f32>>> = vec![None; expected];
        for (pos, d) in resp.data.into_iter().enumerate() {
            let at = d.index.unwrap_or(pos);
            if at >= expected || out[at].is_some() {
                return Err(EmbedError::Response(format!("bad or repeated index {at}")));
            }
            if d.embedding.len() != self.config.dim {
                return Err(EmbedError::DimensionMismatch {
                    expected: self.config.dim,
                    got: d.embedding.len(),
                });
            }
            out[at] = Some(d.embedding);
        }
        Ok(out.into_iter().map(|v| v.expect("all indices filled")).collect())
    }
}

#[cfg(test)]
impl RemoteEmbedder {
    pub(crate) fn without_sleep(mut self) -> Self {
        self.sleeper = |_| {};
        self
    }
}

impl Provider for RemoteEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn batch_size(&self) -> usize {
        self.config.batch_size
    }

    fn max_in_flight(&self) -> usize {
        self.config.max_in_flight
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let input: Vec<&str> = texts
            .iter()
            .map(|t| truncate_to_token_limit(t, self.config.max_input_tokens))
            .collect();
        let body = serde_json::json!({ "model": self.config.model, "input": input }).to_string();
        let url = format!("{}/embeddings", self.config.base_url.trim_end_matches('/'));
        let attempts = self.config.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            self.requests.fetch_add(1, Ordering::SeqCst);
            let hint = match self.transport.post_json(&url, &self.api_key, &body) {
                Ok(resp) if (200..300).contains(&resp.status) => return self.parse(&resp.body, texts.len()),
                Ok(resp) if resp.status == 429 || resp.status >= 500 => {
                    last = format!("HTTP {}", resp.status);
                    resp.retry_after
                }
                Ok(resp) => {
                    return Err(EmbedError::Http {
                        status: resp.status,
                        body: resp.body.chars().take(512).collect(),
                    })
                }
                Err(e) => {
                    last = e;
                    None
                }
            };
            if attempt + 1 < attempts {
                let wait = self.backoff(attempt, hint);
                log::warn!("embedding request failed ({last}); retrying in {wait:?}");
                (self.sleeper)(wait);
            }
        }
        Err(EmbedError::Transport { attempts, message: last })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{embed_texts, EmbeddingCache};
    use std::sync::Mutex;

    /// Echoes one deterministic vector per input; can be told to fail.
    struct Mock {
        dim: usize,
        script: Mutex<Vec<std::result::Result<u16, String>>>,
        bodies: Mutex<Vec<String>>,
    }

    impl Mock {
        fn new(dim: usize) -> Self {
            Self { dim, script: Mutex::new(vec![]), bodies: Mutex::new(vec![]) }
        }
        fn failing(dim: usize, script: Vec<std::result::Result<u16, String>>) -> Self {
            let m = Self::new(dim);
            *m.script.lock().unwrap() = script.into_iter().rev().collect();
            m
        }
    }

    impl Transport for std::sync::Arc<Mock> {
        fn post_json(&self, _url: &str, bearer: &str, body: &str) -> std::result::Result<HttpResponse, String> {
            assert_eq!(bearer, "sk-test");
            self.bodies.lock().unwrap().push(body.to_string());
            if let Some(step) = self.script.lock().unwrap().pop() {
                let status = step?;
                return Ok(HttpResponse { status, retry_after: Some(Duration::from_secs(3)), body: "busy".into() });
            }
            let req: serde_json::Value = serde_json::from_str(body).unwrap();
            let data: Vec<_> = req["input"]
                .as_array()
                .unwrap()
                .iter()
                .enumerate()
                .rev()
                .map(|(i, s)| {
                    let len = s.as_str().unwrap().len() as f32;
                    let v: Vec<f32> = (0..self.dim).map(|k| len + k as f32).collect();
                    serde_json::json!({ "index": i, "embedding": v })
                })
                .collect();
            Ok(HttpResponse { status: 200, retry_after: None, body: serde_json::json!({ "data": data }).to_string() })
        }
    }

    fn embedder(mock: &std::sync::Arc<Mock>, cfg: RemoteConfig) -> RemoteEmbedder {
        RemoteEmbedder::with_transport(cfg, "sk-test".into(), Box::new(mock.clone())).without_sleep()
    }

    #[test]
    fn returns_1536_dims_in_input_order() {
        let mock = std::sync::Arc::new(Mock::new(REMOTE_DEFAULT_DIM));
        let e = embedder(&mock, RemoteConfig { batch_size: 2, ..Default::default() });
        let v = embed_texts(&["a", "bbb", "cc", "dddd", "a"], &e, None).unwrap();
        assert_eq!(v.len(), 5);
        assert!(v.iter().all(|x| x.dim() == 1536));
        let lens: Vec<f32> = v.iter().map(|x| x.values[0]).collect();
        assert_eq!(lens, vec![1.0, 3.0, 2.0, 4.0, 1.0]);
        // four distinct texts, batches of two
        assert_eq!(e.request_count(), 2);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mock = std::sync::Arc::new(Mock::new(8));
        let e = embedder(&mock, RemoteConfig::default());
        assert!(matches!(
            embed_texts(&["x"], &e, None),
            Err(EmbedError::DimensionMismatch { expected: 1536, got: 8 })
        ));
    }

    #[test]
    fn cache_hits_issue_no_requests() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::open(dir.path()).unwrap();
        let mock = std::sync::Arc::new(Mock::new(16));
        let cfg = RemoteConfig { dim: 16, ..Default::default() };
        let e = embedder(&mock, cfg.clone());
        let texts = ["one", "two", "three"];
        let first = embed_texts(&texts, &e, Some(&cache)).unwrap();
        assert_eq!(e.request_count(), 1);
        let again = embedder(&mock, cfg);
        let second = embed_texts(&texts, &again, Some(&cache)).unwrap();
        assert_eq!(again.request_count(), 0);
        assert_eq!(first, second);
    }

    #[test]
    fn retries_then_succeeds() {
        let mock = std::sync::Arc::new(Mock::failing(4, vec![Ok(429), Err("reset".into()), Ok(503)]));
        let e = embedder(&mock, RemoteConfig { dim: 4, ..Default::default() });
        let v = embed_texts(&["hello"], &e, None).unwrap();
        assert_eq!(v[0].values, vec![5.0, 6.0, 7.0, 8.0]);
        assert_eq!(e.request_count(), 4);
    }

    #[test]
    fn gives_up_after_max_attempts() {
        let mock = std::sync::Arc::new(Mock::failing(4, vec![Ok(500); 10]));
        let e = embedder(&mock, RemoteConfig { dim: 4, ..Default::default() });
        match embed_texts(&["hello"], &e, None) {
            Err(EmbedError::Transport { attempts: 5, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert_eq!(e.request_count(), 5);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let mock = std::sync::Arc::new(Mock::failing(4, vec![Ok(401)]));
        let e = embedder(&mock, RemoteConfig { dim: 4, ..Default::default() });
        assert!(matches!(embed_texts(&["x"], &e, None), Err(EmbedError::Http { status: 401, .. })));
        assert_eq!(e.request_count(), 1);
    }

    #[test]
    fn backoff_doubles_and_respects_hint() {
        let mock = std::sync::Arc::new(Mock::new(4));
        let e = embedder(&mock, RemoteConfig::default());
        assert_eq!(e.backoff(0, None), Duration::from_secs(1));
        assert_eq!(e.backoff(2, None), Duration::from_secs(4));
        assert_eq!(e.backoff(0, Some(Duration::from_secs(7))), Duration::from_secs(7));
        assert_eq!(e.backoff(3, Some(Duration::from_secs(1))), Duration::from_secs(8));
        assert_eq!(e.backoff(30, None), Duration::from_secs(60));
    }

    #[test]
    fn long_inputs_are_truncated() {
        let long = "é".repeat(40_000);
        let t = truncate_to_token_limit(&long, 8192);
        assert_eq!(t.chars().count(), 8192 * 4);
        assert_eq!(truncate_to_token_limit("short", 8192), "short");
        let exact = "a".repeat(8192 * 4);
        assert_eq!(truncate_to_token_limit(&exact, 8192).len(), exact.len());

        let mock = std::sync::Arc::new(Mock::new(4));
        let e = embedder(&mock, RemoteConfig { dim: 4, ..Default::default() });
        embed_texts(&[long.as_str()], &e, None).unwrap();
        let sent: serde_json::Value = serde_json::from_str(&mock.bodies.lock().unwrap()[0]).unwrap();
        assert_eq!(sent["input"][0].as_str().unwrap().chars().count(), 8192 * 4);
        assert_eq!(sent["model"], "text-embedding-ada-002");
    }

    #[test]
    fn missing_credential() {
        let cfg = RemoteConfig { api_key_env: "APPCAT_TEST_KEY_THAT_IS_NEVER_SET".into(), ..Default::default() };
        assert!(matches!(RemoteEmbedder::from_env(cfg), Err(EmbedError::CredentialMissing(_))));
    }
}
