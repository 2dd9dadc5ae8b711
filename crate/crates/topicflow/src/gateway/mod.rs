//! Provider abstraction for chat-completion and embedding calls.
//!
//! A [`Gateway`] wraps a [`ChatProvider`] (and optionally an
//! [`EmbeddingProvider`]) with retry-with-backoff, bounded in-flight
//! concurrency, request pacing, and usage accounting. Pipeline stages only
//! ever talk to the gateway, so the same code runs against a live HTTP
//! endpoint, a replay fixture, or the deterministic mock.

pub mod http;
pub mod mock;
pub mod replay;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// One chat-completion request. Defaults follow the pipeline convention of
/// fully greedy decoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
}

impl CompletionRequest {
    pub fn new(model: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            prompt: prompt.into(),
            max_tokens: 300,
            temperature: 0.0,
            top_p: 0.0,
        }
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }
}

/// What a provider hands back before the gateway attaches usage totals.
#[derive(Debug, Clone, Default)]
pub struct RawCompletion {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub meta: BTreeMap<String, String>,
}

/// A completed call as seen by pipeline stages.
#[derive(Debug, Clone)]
pub struct CompletionResponse {
    pub text: String,
    pub usage: UsageRecord,
    pub provider_meta: BTreeMap<String, String>,
}

/// Token, request, and cost totals. Returned per call (request_count =
/// attempts spent on that call) and cumulatively from
/// [`Gateway::usage_report`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub request_count: u64,
    pub estimated_cost: f64,
}

/// One embedding with the model that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model: String,
}

/// Cosine similarity. Zero-norm vectors yield 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine over mismatched dimensions");
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Errors a provider can raise. Retryability is a property of the kind:
/// transport hiccups and rate limits are retryable, the rest are terminal.
#[derive(Debug, Clone, thiserror::Error)]
pub enum ProviderError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("context length exceeded: {0}")]
    ContextLength(String),
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("mock script exhausted; no reply configured for this request")]
    ScriptExhausted,
    #[error("no recorded response for request fingerprint {0}")]
    NotRecorded(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            ProviderError::Transport(_) | ProviderError::RateLimited(_)
        )
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("terminal provider error: {0}")]
    Terminal(ProviderError),
    #[error("retry budget exhausted after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: ProviderError },
    #[error("no embedding provider configured")]
    NoEmbedder,
}

/// Chat-completion backend. Implementations must be shareable across
/// threads; the gateway serializes nothing on their behalf beyond the
/// in-flight cap.
pub trait ChatProvider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &CompletionRequest) -> Result<RawCompletion, ProviderError>;
}

/// Embedding backend; one vector per input text, order preserved.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError>;
}

/// SHA-256 over the canonical JSON form of a request (keys sorted). Keys
/// record/replay fixtures and the keyed mock.
pub fn request_fingerprint(request: &CompletionRequest) -> String {
    let mut map = BTreeMap::new();
    map.insert("max_tokens", serde_json::json!(request.max_tokens));
    map.insert("model", serde_json::json!(request.model));
    map.insert("prompt", serde_json::json!(request.prompt));
    map.insert("temperature", serde_json::json!(request.temperature));
    map.insert("top_p", serde_json::json!(request.top_p));
    let canonical = serde_json::to_string(&map).expect("request serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 250,
            max_delay_ms: 4000,
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, attempt: u32) -> Duration {
        let exp = self.base_delay_ms.saturating_mul(1u64 << (attempt - 1).min(16));
        Duration::from_millis(exp.min(self.max_delay_ms))
    }
}

/// Counting semaphore bounding outstanding provider calls.
struct InflightLimiter {
    state: Mutex<usize>,
    freed: Condvar,
    max: usize,
}

struct InflightPermit<'a>(&'a InflightLimiter);

impl InflightLimiter {
    fn new(max: usize) -> Self {
        assert!(max >= 1, "max_inflight must be at least 1");
        Self {
            state: Mutex::new(0),
            freed: Condvar::new(),
            max,
        }
    }

    fn acquire(&self) -> InflightPermit<'_> {
        let mut inflight = self.state.lock().expect("limiter lock");
        while *inflight >= self.max {
            inflight = self.freed.wait(inflight).expect("limiter wait");
        }
        *inflight += 1;
        InflightPermit(self)
    }
}

impl Drop for InflightPermit<'_> {
    fn drop(&mut self) {
        let mut inflight = self.0.state.lock().expect("limiter lock");
        *inflight -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Default)]
struct ModelTally {
    prompt_tokens: u64,
    completion_tokens: u64,
    completions: u64,
}

/// The retry/limit/accounting wrapper every stage calls through.
pub struct Gateway {
    chat: Arc<dyn ChatProvider>,
    embedder: Option<Arc<dyn EmbeddingProvider>>,
    retry: RetryPolicy,
    limiter: InflightLimiter,
    min_interval: Duration,
    last_dispatch: Mutex<Option<Instant>>,
    rates_per_1k: HashMap<String, f64>,
    tally: Mutex<HashMap<String, ModelTally>>,
    requests: AtomicU64,
}

impl Gateway {
    pub fn new(chat: Arc<dyn ChatProvider>) -> Self {
        Self {
            chat,
            embedder: None,
            retry: RetryPolicy::default(),
            limiter: InflightLimiter::new(4),
            min_interval: Duration::ZERO,
            last_dispatch: Mutex::new(None),
            rates_per_1k: HashMap::new(),
            tally: Mutex::new(HashMap::new()),
            requests: AtomicU64::new(0),
        }
    }

    pub fn with_embedder(mut self, embedder: Arc<dyn EmbeddingProvider>) -> Self {
        self.embedder = Some(embedder);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        assert!(retry.max_attempts >= 1, "max_attempts must be at least 1");
        self.retry = retry;
        self
    }

    pub fn with_max_inflight(mut self, max: usize) -> Self {
        self.limiter = InflightLimiter::new(max);
        self
    }

    /// Minimum gap between request dispatches; 0 disables pacing.
    pub fn with_min_interval_ms(mut self, ms: u64) -> Self {
        self.min_interval = Duration::from_millis(ms);
        self
    }

    /// Cost rate for one model, in currency per 1000 tokens (prompt and
    /// completion tokens priced alike). Models without a rate cost 0.
    pub fn with_rate(mut self, model: impl Into<String>, per_1k_tokens: f64) -> Self {
        self.rates_per_1k.insert(model.into(), per_1k_tokens);
        self
    }

    pub fn with_rates(mut self, rates: HashMap<String, f64>) -> Self {
        self.rates_per_1k.extend(rates);
        self
    }

    pub fn provider_name(&self) -> &str {
        self.chat.name()
    }

    fn pace(&self) {
        if self.min_interval.is_zero() {
            return;
        }
        // Single serialization point: one dispatch per interval.
        let mut last = self.last_dispatch.lock().expect("pacer lock");
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < self.min_interval {
                std::thread::sleep(self.min_interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn rate_for(&self, model: &str) -> f64 {
        self.rates_per_1k.get(model).copied().unwrap_or(0.0)
    }

    fn record_tokens(&self, model: &str, prompt: u64, completion: u64) {
        let mut tally = self.tally.lock().expect("tally lock");
        let entry = tally.entry(model.to_string()).or_default();
        entry.prompt_tokens += prompt;
        entry.completion_tokens += completion;
        entry.completions += 1;
    }

    /// Call the chat provider, retrying transient failures with
    /// exponential backoff. The returned usage covers this call only, with
    /// `request_count` equal to the attempts it took.
    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let _permit = self.limiter.acquire();
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.pace();
            self.requests.fetch_add(1, Ordering::Relaxed);
            match self.chat.complete(request) {
                Ok(raw) => {
                    self.record_tokens(&request.model, raw.prompt_tokens, raw.completion_tokens);
                    let tokens = raw.prompt_tokens + raw.completion_tokens;
                    let cost = self.rate_for(&request.model) * tokens as f64 / 1000.0;
                    return Ok(CompletionResponse {
                        text: raw.text,
                        usage: UsageRecord {
                            prompt_tokens: raw.prompt_tokens,
                            completion_tokens: raw.completion_tokens,
                            request_count: attempt as u64,
                            estimated_cost: cost,
                        },
                        provider_meta: raw.meta,
                    });
                }
                Err(e) if e.is_retryable() && attempt < self.retry.max_attempts => {
                    log::warn!(
                        "attempt {attempt}/{} failed ({e}); backing off",
                        self.retry.max_attempts
                    );
                    std::thread::sleep(self.retry.backoff(attempt));
                }
                Err(e) if e.is_retryable() => {
                    return Err(GatewayError::RetriesExhausted {
                        attempts: attempt,
                        last: e,
                    });
                }
                Err(e) => return Err(GatewayError::Terminal(e)),
            }
        }
    }

    /// Embed texts (order preserved), with the same retry taxonomy as
    /// [`Gateway::complete`]. Embedding token usage is estimated from input
    /// length since mock and replay providers report none.
    pub fn embed(
        &self,
        model: &str,
        texts: &[String],
    ) -> Result<Vec<EmbeddingVector>, GatewayError> {
        let embedder = self.embedder.as_ref().ok_or(GatewayError::NoEmbedder)?;
        let _permit = self.limiter.acquire();
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.pace();
            self.requests.fetch_add(1, Ordering::Relaxed);
            match embedder.embed(model, texts) {
                Ok(vectors) => {
                    let chars: usize = texts.iter().map(|t| t.chars().count()).sum();
                    self.record_tokens(model, chars.div_ceil(4) as u64, 0);
                    return Ok(vectors
                        .into_iter()
                        .map(|values| EmbeddingVector {
                            values,
                            model: model.to_string(),
                        })
                        .collect());
                }
                Err(e) if e.is_retryable() && attempt < self.retry.max_attempts => {
                    std::thread::sleep(self.retry.backoff(attempt));
                }
                Err(e) if e.is_retryable() => {
                    return Err(GatewayError::RetriesExhausted {
                        attempts: attempt,
                        last: e,
                    });
                }
                Err(e) => return Err(GatewayError::Terminal(e)),
            }
        }
    }

    /// Cumulative totals since construction. Cost is the per-model rate
    /// times that model's combined token count, summed over models.
    pub fn usage_report(&self) -> UsageRecord {
        let tally = self.tally.lock().expect("tally lock");
        let mut record = UsageRecord {
            request_count: self.requests.load(Ordering::Relaxed),
            ..Default::default()
        };
        for (model, t) in tally.iter() {
            record.prompt_tokens += t.prompt_tokens;
            record.completion_tokens += t.completion_tokens;
            record.estimated_cost +=
                self.rate_for(model) * (t.prompt_tokens + t.completion_tokens) as f64 / 1000.0;
        }
        record
    }

    /// Cumulative totals per model. Here `request_count` counts completed
    /// calls; failed attempts are only visible in [`Gateway::usage_report`].
    pub fn usage_by_model(&self) -> BTreeMap<String, UsageRecord> {
        let tally = self.tally.lock().expect("tally lock");
        tally
            .iter()
            .map(|(model, t)| {
                let record = UsageRecord {
                    prompt_tokens: t.prompt_tokens,
                    completion_tokens: t.completion_tokens,
                    request_count: t.completions,
                    estimated_cost: self.rate_for(model)
                        * (t.prompt_tokens + t.completion_tokens) as f64
                        / 1000.0,
                };
                (model.clone(), record)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::mock::{Fallback, MockChat, MockEmbedder, MockFailure};
    use super::*;

    fn fast_retry(max_attempts: u32) -> RetryPolicy {
        RetryPolicy {
            max_attempts,
            base_delay_ms: 1,
            max_delay_ms: 2,
        }
    }

    #[test]
    fn scripted_echo_passes_through() {
        let mock = Arc::new(MockChat::new().with_script(["None"]));
        let gw = Gateway::new(mock);
        let resp = gw.complete(&CompletionRequest::new("m", "p")).unwrap();
        assert_eq!(resp.text, "None");
        assert_eq!(resp.usage.request_count, 1);
    }

    #[test]
    fn transient_failures_are_retried() {
        let mock = MockChat::new();
        mock.push_failure(MockFailure::Transport);
        mock.push_failure(MockFailure::RateLimited);
        mock.push_reply("recovered");
        let gw = Gateway::new(Arc::new(mock)).with_retry(fast_retry(5));
        let resp = gw.complete(&CompletionRequest::new("m", "p")).unwrap();
        assert_eq!(resp.text, "recovered");
        assert_eq!(resp.usage.request_count, 3);
        assert_eq!(gw.usage_report().request_count, 3);
    }

    #[test]
    fn retry_budget_exhausts() {
        let mock = MockChat::new();
        for _ in 0..3 {
            mock.push_failure(MockFailure::Transport);
        }
        let gw = Gateway::new(Arc::new(mock)).with_retry(fast_retry(3));
        match gw.complete(&CompletionRequest::new("m", "p")) {
            Err(GatewayError::RetriesExhausted { attempts: 3, .. }) => {}
            other => panic!("expected RetriesExhausted, got {other:?}"),
        }
    }

    #[test]
    fn auth_failure_is_terminal_without_retry() {
        let mock = MockChat::new();
        mock.push_failure(MockFailure::Auth);
        mock.push_reply("never reached");
        let gw = Gateway::new(Arc::new(mock)).with_retry(fast_retry(5));
        match gw.complete(&CompletionRequest::new("m", "p")) {
            Err(GatewayError::Terminal(ProviderError::Auth(_))) => {}
            other => panic!("expected terminal auth error, got {other:?}"),
        }
        assert_eq!(gw.usage_report().request_count, 1);
    }

    #[test]
    fn context_length_is_terminal() {
        let mock = MockChat::new();
        mock.push_failure(MockFailure::ContextLength);
        let gw = Gateway::new(Arc::new(mock));
        assert!(matches!(
            gw.complete(&CompletionRequest::new("m", "p")),
            Err(GatewayError::Terminal(ProviderError::ContextLength(_)))
        ));
    }

    #[test]
    fn hash_fallback_is_deterministic() {
        let gw = Gateway::new(Arc::new(MockChat::new().with_fallback(Fallback::HashTopic)));
        let req = CompletionRequest::new("m", "the very same prompt");
        let a = gw.complete(&req).unwrap().text;
        let b = gw.complete(&req).unwrap().text;
        assert_eq!(a, b);
        let c = gw
            .complete(&CompletionRequest::new("m", "a different prompt"))
            .unwrap()
            .text;
        assert_ne!(a, c);
    }

    #[test]
    fn usage_cost_follows_rate_table() {
        // 400-char prompt estimates to 100 tokens, 200-char reply to 50.
        let prompt = "x".repeat(400);
        let reply = "y".repeat(200);
        let mock = MockChat::new().with_script([reply.as_str(), reply.as_str()]);
        let gw = Gateway::new(Arc::new(mock)).with_rate("m", 2.0);
        let req = CompletionRequest::new("m", prompt);
        gw.complete(&req).unwrap();
        gw.complete(&req).unwrap();
        let usage = gw.usage_report();
        assert_eq!(usage.prompt_tokens, 200);
        assert_eq!(usage.completion_tokens, 100);
        assert_eq!(usage.request_count, 2);
        // 300 tokens at 2.0 per 1000.
        assert!((usage.estimated_cost - 300.0 * 2.0 / 1000.0).abs() < 1e-12);
    }

    #[test]
    fn zero_requests_reports_all_zero() {
        let gw = Gateway::new(Arc::new(MockChat::new()));
        assert_eq!(gw.usage_report(), UsageRecord::default());
    }

    #[test]
    fn unrated_models_cost_nothing() {
        let gw = Gateway::new(Arc::new(MockChat::new().with_fallback(Fallback::fixed("ok"))));
        gw.complete(&CompletionRequest::new("unknown-model", "p"))
            .unwrap();
        assert_eq!(gw.usage_report().estimated_cost, 0.0);
    }

    #[test]
    fn inflight_stays_under_cap() {
        use super::mock::CountingChat;
        let counter = Arc::new(CountingChat::new(
            Arc::new(MockChat::new().with_fallback(Fallback::fixed("ok"))),
            Duration::from_millis(5),
        ));
        let gw = Arc::new(Gateway::new(counter.clone()).with_max_inflight(2));
        let handles: Vec<_> = (0..8)
            .map(|i| {
                let gw = Arc::clone(&gw);
                std::thread::spawn(move || {
                    gw.complete(&CompletionRequest::new("m", format!("p{i}")))
                        .unwrap();
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(counter.peak() <= 2, "peak inflight {}", counter.peak());
        assert_eq!(gw.usage_report().request_count, 8);
    }

    #[test]
    fn pacing_spreads_dispatches() {
        let gw = Gateway::new(Arc::new(MockChat::new().with_fallback(Fallback::fixed("ok"))))
            .with_min_interval_ms(20);
        let start = Instant::now();
        for _ in 0..3 {
            gw.complete(&CompletionRequest::new("m", "p")).unwrap();
        }
        // Two full intervals must elapse between the three dispatches.
        assert!(start.elapsed() >= Duration::from_millis(38));
    }

    #[test]
    fn embedding_order_and_determinism() {
        let gw = Gateway::new(Arc::new(MockChat::new()))
            .with_embedder(Arc::new(MockEmbedder::hashed(8)));
        let texts = vec!["alpha".to_string(), "beta".to_string(), "alpha".to_string()];
        let vs = gw.embed("emb", &texts).unwrap();
        assert_eq!(vs.len(), 3);
        assert!(vs.iter().all(|v| v.values.len() == 8));
        assert_eq!(vs[0], vs[2]);
        assert_ne!(vs[0].values, vs[1].values);
    }

    #[test]
    fn embed_without_embedder_errors() {
        let gw = Gateway::new(Arc::new(MockChat::new()));
        assert!(matches!(
            gw.embed("emb", &["t".to_string()]),
            Err(GatewayError::NoEmbedder)
        ));
    }

    #[test]
    fn fingerprint_tracks_every_field() {
        let base = CompletionRequest::new("m", "p");
        let fp = request_fingerprint(&base);
        assert_eq!(fp.len(), 64);
        assert_eq!(fp, request_fingerprint(&base.clone()));
        let mut other = base.clone();
        other.model = "m2".into();
        assert_ne!(fp, request_fingerprint(&other));
        let mut other = base.clone();
        other.prompt = "q".into();
        assert_ne!(fp, request_fingerprint(&other));
        let mut other = base.clone();
        other.max_tokens = 301;
        assert_ne!(fp, request_fingerprint(&other));
        let mut other = base;
        other.temperature = 0.5;
        assert_ne!(fp, request_fingerprint(&other));
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine(&[1.0, 0.0], &[1.0, 0.0]) - 1.0).abs() < 1e-12);
        assert!(cosine(&[1.0, 0.0], &[0.0, 1.0]).abs() < 1e-12);
        assert!((cosine(&[1.0, 0.0], &[-1.0, 0.0]) + 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
    }
}
