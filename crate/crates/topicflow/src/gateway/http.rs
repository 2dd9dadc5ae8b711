//! Blocking HTTP provider for OpenAI-compatible chat-completion and
//! embedding endpoints.
//!
//! Live calls are inherently nondeterministic and carry cost, so nothing
//! in the test suite exercises this module over the network; offline runs
//! use the mock or a replay fixture instead.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{ChatProvider, CompletionRequest, EmbeddingProvider, ProviderError, RawCompletion};

#[derive(Debug, Clone)]
pub struct HttpProviderConfig {
    /// Base URL, e.g. "https://api.openai.com/v1".
    pub endpoint: String,
    pub api_key: String,
    pub timeout_secs: u64,
}

impl HttpProviderConfig {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            timeout_secs: 120,
        }
    }
}

pub struct HttpChat {
    client: reqwest::blocking::Client,
    config: HttpProviderConfig,
}

pub struct HttpEmbedder {
    client: reqwest::blocking::Client,
    config: HttpProviderConfig,
}

fn build_client(timeout_secs: u64) -> Result<reqwest::blocking::Client, ProviderError> {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(timeout_secs))
        .build()
        .map_err(|e| ProviderError::Transport(format!("client construction failed: {e}")))
}

fn classify_status(status: reqwest::StatusCode, body: &str) -> ProviderError {
    match status.as_u16() {
        401 | 403 => ProviderError::Auth(format!("status {status}: {body}")),
        429 => ProviderError::RateLimited(format!("status {status}")),
        400 if body.contains("context_length") || body.contains("maximum context") => {
            ProviderError::ContextLength(body.to_string())
        }
        500..=599 => ProviderError::Transport(format!("status {status}: {body}")),
        _ => ProviderError::Malformed(format!("status {status}: {body}")),
    }
}

fn post_json(
    client: &reqwest::blocking::Client,
    config: &HttpProviderConfig,
    path: &str,
    body: serde_json::Value,
) -> Result<String, ProviderError> {
    let url = format!("{}{path}", config.endpoint);
    let response = client
        .post(&url)
        .bearer_auth(&config.api_key)
        .json(&body)
        .send()
        .map_err(|e| ProviderError::Transport(e.to_string()))?;
    let status = response.status();
    let text = response
        .text()
        .map_err(|e| ProviderError::Transport(e.to_string()))?;
    if !status.is_success() {
        return Err(classify_status(status, &text));
    }
    Ok(text)
}

#[derive(Deserialize)]
struct ChatCompletionBody {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ApiUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

#[derive(Deserialize, Default)]
struct ApiUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl HttpChat {
    pub fn new(config: HttpProviderConfig) -> Result<Self, ProviderError> {
        Ok(Self {
            client: build_client(config.timeout_secs)?,
            config,
        })
    }
}

impl ChatProvider for HttpChat {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<RawCompletion, ProviderError> {
        let body = json!({
            "model": request.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "top_p": request.top_p,
        });
        let text = post_json(&self.client, &self.config, "/chat/completions", body)?;
        let parsed: ChatCompletionBody = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Malformed(format!("completion body: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ProviderError::Malformed("no choices in response".into()))?;
        let usage = parsed.usage.unwrap_or_default();
        Ok(RawCompletion {
            text: choice.message.content,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
            meta: Default::default(),
        })
    }
}

#[derive(Deserialize)]
struct EmbeddingBody {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f64>,
}

impl HttpEmbedder {
    pub fn new(config: HttpProviderConfig) -> Result<Self, ProviderError> {
        Ok(Self {
            client: build_client(config.timeout_secs)?,
            config,
        })
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn name(&self) -> &str {
        "http-embedder"
    }

    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::Malformed("empty embedding batch".into()));
        }
        let body = json!({"model": model, "input": texts});
        let text = post_json(&self.client, &self.config, "/embeddings", body)?;
        let parsed: EmbeddingBody = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Malformed(format!("embedding body: {e}")))?;
        if parsed.data.len() != texts.len() {
            return Err(ProviderError::Malformed(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        let mut data = parsed.data;
        data.sort_by_key(|d| d.index);
        Ok(data.into_iter().map(|d| d.embedding).collect())
    }
}
