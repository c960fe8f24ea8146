//! OpenAI-compatible chat-completion and embedding endpoints.
//!
//! Endpoints come from `LLM_BASE_URL` / `EMBED_BASE_URL` (e.g.
//! `https://api.example.com/v1`) with optional bearer keys in
//! `LLM_API_KEY` / `EMBED_API_KEY`.

use std::time::Duration;

use kare_core::vector::Embedding;
use serde::Deserialize;
use serde_json::json;

use super::{BackendError, ChatBackend, EmbedBackend, GatewayError, Prompt};

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::new_with_config(ureq::Agent::config_builder().timeout_global(Some(timeout)).build())
}

fn env_endpoint(url_var: &str, key_var: &str) -> Result<(String, Option<String>), GatewayError> {
    let base = std::env::var(url_var).map_err(|_| GatewayError::Config(format!("{url_var} is not set")))?;
    let key = std::env::var(key_var).ok().filter(|k| !k.is_empty());
    Ok((base.trim_end_matches('/').to_string(), key))
}

fn classify(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::StatusCode(status) => BackendError {
            status: Some(status),
            message: format!("HTTP {status}"),
            retryable: status == 429 || status >= 500,
        },
        ureq::Error::Io(_) | ureq::Error::Timeout(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => {
            BackendError::transient(e.to_string())
        }
        other => BackendError::fatal(other.to_string()),
    }
}

fn post(agent: &ureq::Agent, url: &str, key: Option<&str>, body: &serde_json::Value) -> Result<serde_json::Value, BackendError> {
    let mut req = agent.post(url).header("content-type", "application/json");
    if let Some(k) = key {
        req = req.header("authorization", &format!("Bearer {k}"));
    }
    let mut resp = req.send_json(body).map_err(classify)?;
    resp.body_mut().read_json().map_err(|e| BackendError::fatal(format!("unreadable response: {e}")))
}

pub struct HttpChat {
    agent: ureq::Agent,
    base: String,
    key: Option<String>,
    model: String,
}

impl HttpChat {
    pub fn new(base: &str, key: Option<String>, model: &str, timeout: Duration) -> Self {
        HttpChat { agent: agent(timeout), base: base.trim_end_matches('/').to_string(), key, model: model.to_string() }
    }

    pub fn from_env(model: &str, timeout: Duration) -> Result<Self, GatewayError> {
        let (base, key) = env_endpoint("LLM_BASE_URL", "LLM_API_KEY")?;
        Ok(Self::new(&base, key, model, timeout))
    }
}

impl ChatBackend for HttpChat {
    fn id(&self) -> String {
        format!("http:{}", self.model)
    }

    fn complete(&self, prompt: &Prompt<'_>) -> Result<String, BackendError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt.text}],
            "max_tokens": prompt.max_tokens,
            "temperature": if prompt.determinism == 0 { 0.0 } else { 0.7 },
            "seed": prompt.determinism,
        });
        let v = post(&self.agent, &format!("{}/chat/completions", self.base), self.key.as_deref(), &body)?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::fatal("response has no choices[0].message.content"))
    }
}

pub struct HttpEmbed {
    agent: ureq::Agent,
    base: String,
    key: Option<String>,
    model: String,
}

#[derive(Deserialize)]
struct EmbeddingRow {
    #[serde(default)]
    index: Option<usize>,
    embedding: Embedding,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingRow>,
}

impl HttpEmbed {
    pub fn new(base: &str, key: Option<String>, model: &str, timeout: Duration) -> Self {
        HttpEmbed { agent: agent(timeout), base: base.trim_end_matches('/').to_string(), key, model: model.to_string() }
    }

    pub fn from_env(model: &str, timeout: Duration) -> Result<Self, GatewayError> {
        let (base, key) = env_endpoint("EMBED_BASE_URL", "EMBED_API_KEY")?;
        Ok(Self::new(&base, key, model, timeout))
    }
}

impl EmbedBackend for HttpEmbed {
    fn id(&self) -> String {
        format!("http:{}", self.model)
    }

    fn dim(&self) -> Option<usize> {
        None
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, BackendError> {
        let body = json!({ "model": self.model, "input": texts });
        let v = post(&self.agent, &format!("{}/embeddings", self.base), self.key.as_deref(), &body)?;
        let mut parsed: EmbeddingResponse =
            serde_json::from_value(v).map_err(|e| BackendError::fatal(format!("bad embedding response: {e}")))?;
        if parsed.data.iter().all(|r| r.index.is_some()) {
            parsed.data.sort_by_key(|r| r.index);
        }
        Ok(parsed.data.into_iter().map(|r| r.embedding).collect())
    }
}
