//! Chat and embedding access with template rendering, response caching,
//! retries and a bound on concurrent backend requests.

pub mod http;
pub mod mock;
pub mod templates;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use kare_core::vector::Embedding;
use serde::Serialize;
use thiserror::Error;

use crate::config::{BackendConfig, ChatKind, EmbedKind};
use crate::io::{sha256_hex, write_atomic};
pub use templates::{PromptTemplate, TemplateSet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message}{}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
pub struct BackendError {
    pub status: Option<u16>,
    pub message: String,
    pub retryable: bool,
}

impl BackendError {
    pub fn fatal(message: impl Into<String>) -> Self {
        BackendError { status: None, message: message.into(), retryable: false }
    }

    pub fn transient(message: impl Into<String>) -> Self {
        BackendError { status: None, message: message.into(), retryable: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("template {template}: {message}")]
    Render { template: String, message: String },
    #[error("unknown template {0}")]
    UnknownTemplate(String),
    #[error("backend {backend} failed after {attempts} attempt(s): {last}")]
    Backend { backend: String, attempts: u32, last: BackendError },
    #[error("embedding backend returned {got} vectors for {expected} texts")]
    EmbeddingCount { expected: usize, got: usize },
    #[error("embedding backend returned dimension {got}, expected {expected}")]
    EmbeddingDim { expected: usize, got: usize },
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("cache entry {key} is corrupt: {message}")]
    Cache { key: String, message: String },
}

/// What a chat backend receives for one call.
#[derive(Debug, Clone, Copy)]
pub struct Prompt<'a> {
    pub template_id: &'a str,
    pub bindings: &'a BTreeMap<String, String>,
    pub text: &'a str,
    pub max_tokens: u32,
    pub determinism: u64,
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, prompt: &Prompt<'_>) -> Result<String, BackendError>;
}

pub trait EmbedBackend: Send + Sync {
    fn id(&self) -> String;
    /// Fixed output dimension when known in advance.
    fn dim(&self) -> Option<usize>;
    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChatRequest {
    pub template_id: String,
    pub bindings: BTreeMap<String, String>,
    /// Distinguishes otherwise identical requests (e.g. the k-th sample);
    /// forwarded to backends that accept a seed.
    pub determinism: u64,
}

impl ChatRequest {
    pub fn new<K: Into<String>, V: Into<String>>(template_id: &str, bindings: impl IntoIterator<Item = (K, V)>) -> Self {
        ChatRequest {
            template_id: template_id.to_string(),
            bindings: bindings.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
            determinism: 0,
        }
    }

    pub fn with_determinism(mut self, k: u64) -> Self {
        self.determinism = k;
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StatsSnapshot {
    pub chat_calls: u64,
    pub chat_cache_hits: u64,
    pub embed_calls: u64,
    pub embed_cache_hits: u64,
    pub retries: u64,
    pub failures: u64,
    pub peak_in_flight: usize,
}

#[derive(Default)]
struct Stats {
    chat_calls: AtomicU64,
    chat_cache_hits: AtomicU64,
    embed_calls: AtomicU64,
    embed_cache_hits: AtomicU64,
    retries: AtomicU64,
    failures: AtomicU64,
    peak_in_flight: AtomicUsize,
}

struct Limiter {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn acquire(&self, stats: &Stats) -> Permit<'_> {
        let mut n = self.in_flight.lock().expect("limiter lock");
        while *n >= self.max {
            n = self.freed.wait(n).expect("limiter lock");
        }
        *n += 1;
        stats.peak_in_flight.fetch_max(*n, Ordering::SeqCst);
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("limiter lock") -= 1;
        self.0.freed.notify_one();
    }
}

/// In-memory map backed by an optional directory of content-addressed files.
struct Cache {
    memory: Mutex<HashMap<String, String>>,
    dir: Option<PathBuf>,
}

impl Cache {
    fn path(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(&key[..2]).join(format!("{key}.txt")))
    }

    fn get(&self, key: &str) -> Option<String> {
        if let Some(v) = self.memory.lock().expect("cache lock").get(key) {
            return Some(v.clone());
        }
        let value = std::fs::read_to_string(self.path(key)?).ok()?;
        self.memory.lock().expect("cache lock").insert(key.to_string(), value.clone());
        Some(value)
    }

    fn put(&self, key: &str, value: &str) {
        self.memory.lock().expect("cache lock").insert(key.to_string(), value.to_string());
        if let Some(path) = self.path(key) {
            if let Err(e) = write_atomic(&path, value.as_bytes()) {
                log::warn!("could not persist cache entry {key}: {e}");
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GatewayOptions {
    pub max_tokens: u32,
    pub max_in_flight: usize,
    pub max_attempts: u32,
    pub backoff: Duration,
    pub embed_batch: usize,
    pub cache_dir: Option<PathBuf>,
    pub templates: TemplateSet,
}

impl Default for GatewayOptions {
    fn default() -> Self {
        GatewayOptions {
            max_tokens: 4096,
            max_in_flight: 8,
            max_attempts: 4,
            backoff: Duration::from_millis(200),
            embed_batch: 64,
            cache_dir: None,
            templates: TemplateSet::builtin(),
        }
    }
}

pub struct Gateway {
    chat: Arc<dyn ChatBackend>,
    embedder: Arc<dyn EmbedBackend>,
    options: GatewayOptions,
    cache: Cache,
    limiter: Limiter,
    stats: Stats,
}

impl Gateway {
    pub fn new(chat: Arc<dyn ChatBackend>, embedder: Arc<dyn EmbedBackend>, options: GatewayOptions) -> Self {
        Gateway {
            chat,
            embedder,
            cache: Cache { memory: Mutex::new(HashMap::new()), dir: options.cache_dir.clone() },
            limiter: Limiter { max: options.max_in_flight.max(1), in_flight: Mutex::new(0), freed: Condvar::new() },
            stats: Stats::default(),
            options,
        }
    }

    /// Builds backends from configuration; HTTP backends read their
    /// endpoints and keys from the environment.
    pub fn from_config(cfg: &BackendConfig, cache_dir: Option<PathBuf>, prompt_dir: Option<PathBuf>) -> Result<Self, GatewayError> {
        let timeout = Duration::from_secs(cfg.timeout_secs);
        let chat: Arc<dyn ChatBackend> = match cfg.chat {
            ChatKind::Synthetic => Arc::new(mock::SyntheticChat),
            ChatKind::Echo => Arc::new(mock::EchoChat),
            ChatKind::Http => Arc::new(http::HttpChat::from_env(&cfg.chat_model, timeout)?),
        };
        let embedder: Arc<dyn EmbedBackend> = match cfg.embed {
            EmbedKind::Hash => Arc::new(mock::HashEmbedder::new(cfg.embed_dim)),
            EmbedKind::Http => Arc::new(http::HttpEmbed::from_env(&cfg.embed_model, timeout)?),
        };
        let templates = match prompt_dir {
            Some(dir) => TemplateSet::with_overrides(&dir)?,
            None => TemplateSet::builtin(),
        };
        let options = GatewayOptions {
            max_tokens: cfg.max_tokens,
            max_in_flight: cfg.max_in_flight,
            max_attempts: cfg.max_attempts,
            backoff: Duration::from_millis(cfg.backoff_ms),
            embed_batch: cfg.embed_batch,
            cache_dir,
            templates,
        };
        Ok(Gateway::new(chat, embedder, options))
    }

    pub fn chat_backend_id(&self) -> String {
        self.chat.id()
    }

    pub fn embed_backend_id(&self) -> String {
        self.embedder.id()
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.options.templates
    }

    pub fn stats(&self) -> StatsSnapshot {
        let s = &self.stats;
        StatsSnapshot {
            chat_calls: s.chat_calls.load(Ordering::SeqCst),
            chat_cache_hits: s.chat_cache_hits.load(Ordering::SeqCst),
            embed_calls: s.embed_calls.load(Ordering::SeqCst),
            embed_cache_hits: s.embed_cache_hits.load(Ordering::SeqCst),
            retries: s.retries.load(Ordering::SeqCst),
            failures: s.failures.load(Ordering::SeqCst),
            peak_in_flight: s.peak_in_flight.load(Ordering::SeqCst),
        }
    }

    pub fn render(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        self.options.templates.get(&request.template_id)?.render(&request.bindings)
    }

    fn chat_key(&self, request: &ChatRequest, rendered: &str) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            kind: &'static str,
            backend: String,
            template: &'a str,
            // changes when a template override edits the prompt text
            prompt_digest: String,
            bindings: &'a BTreeMap<String, String>,
            determinism: u64,
        }
        let key = Key {
            kind: "chat",
            backend: self.chat.id(),
            template: &request.template_id,
            prompt_digest: sha256_hex(rendered.as_bytes()),
            bindings: &request.bindings,
            determinism: request.determinism,
        };
        sha256_hex(&serde_json::to_vec(&key).expect("serializable"))
    }

    fn with_retry<T>(&self, backend: String, mut call: impl FnMut() -> Result<T, BackendError>) -> Result<T, GatewayError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            let outcome = {
                let _permit = self.limiter.acquire(&self.stats);
                call()
            };
            match outcome {
                Ok(v) => return Ok(v),
                Err(e) if e.retryable && attempt < self.options.max_attempts => {
                    self.stats.retries.fetch_add(1, Ordering::SeqCst);
                    let wait = self.options.backoff.saturating_mul(1 << (attempt - 1).min(16));
                    log::debug!("{backend}: attempt {attempt} failed ({e}); retrying in {wait:?}");
                    std::thread::sleep(wait);
                }
                Err(last) => {
                    self.stats.failures.fetch_add(1, Ordering::SeqCst);
                    return Err(GatewayError::Backend { backend, attempts: attempt, last });
                }
            }
        }
    }

    /// Renders and completes a request, serving repeats from the cache.
    pub fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let text = self.render(request)?;
        let key = self.chat_key(request, &text);
        if let Some(hit) = self.cache.get(&key) {
            self.stats.chat_cache_hits.fetch_add(1, Ordering::SeqCst);
            return Ok(hit);
        }
        let prompt = Prompt {
            template_id: &request.template_id,
            bindings: &request.bindings,
            text: &text,
            max_tokens: self.options.max_tokens,
            determinism: request.determinism,
        };
        let started = Instant::now();
        let response = self.with_retry(self.chat.id(), || {
            self.stats.chat_calls.fetch_add(1, Ordering::SeqCst);
            self.chat.complete(&prompt)
        })?;
        log::trace!("{} completed in {:?}", request.template_id, started.elapsed());
        self.cache.put(&key, &response);
        Ok(response)
    }

    fn embed_key(&self, text: &str) -> String {
        let mut material = format!("embed\u{1f}{}\u{1f}", self.embedder.id()).into_bytes();
        material.extend_from_slice(text.as_bytes());
        sha256_hex(&material)
    }

    /// One vector per input text, in order; cached per text.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, GatewayError> {
        let mut out: Vec<Option<Embedding>> = vec![None; texts.len()];
        let mut missing: Vec<usize> = Vec::new();
        for (i, t) in texts.iter().enumerate() {
            let key = self.embed_key(t);
            match self.cache.get(&key) {
                Some(hit) => {
                    let v: Embedding = serde_json::from_str(&hit)
                        .map_err(|e| GatewayError::Cache { key: key.clone(), message: e.to_string() })?;
                    self.stats.embed_cache_hits.fetch_add(1, Ordering::SeqCst);
                    out[i] = Some(v);
                }
                None => missing.push(i),
            }
        }
        // identical texts inside one call are embedded once
        let mut unique: Vec<usize> = Vec::new();
        let mut first: HashMap<&str, usize> = HashMap::new();
        for &i in &missing {
            first.entry(texts[i].as_str()).or_insert_with(|| {
                unique.push(i);
                i
            });
        }
        for batch in unique.chunks(self.options.embed_batch.max(1)) {
            let inputs: Vec<String> = batch.iter().map(|&i| texts[i].clone()).collect();
            let vectors = self.with_retry(self.embedder.id(), || {
                self.stats.embed_calls.fetch_add(1, Ordering::SeqCst);
                self.embedder.embed(&inputs)
            })?;
            if vectors.len() != inputs.len() {
                return Err(GatewayError::EmbeddingCount { expected: inputs.len(), got: vectors.len() });
            }
            for (&i, v) in batch.iter().zip(vectors) {
                if let Some(d) = self.embedder.dim() {
                    if v.len() != d {
                        return Err(GatewayError::EmbeddingDim { expected: d, got: v.len() });
                    }
                }
                self.cache.put(&self.embed_key(&texts[i]), &serde_json::to_string(&v).expect("serializable"));
                out[i] = Some(v);
            }
        }
        for &i in &missing {
            if out[i].is_none() {
                out[i] = out[first[texts[i].as_str()]].clone();
            }
        }
        Ok(out.into_iter().map(|v| v.expect("every text embedded")).collect())
    }

    pub fn embed_one(&self, text: &str) -> Result<Embedding, GatewayError> {
        Ok(self.embed(&[text.to_string()])?.remove(0))
    }
}
