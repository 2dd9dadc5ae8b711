//! Plug a hand-written provider into the gateway.
//!
//! All model traffic flows through the Gateway, which adds retry with
//! exponential backoff (transport and rate-limit errors only), an
//! in-flight cap, optional request pacing, and per-model usage and
//! cost accounting. Anything implementing ChatProvider slots in: the
//! bundled mocks, the HTTP client, a record/replay wrapper, or your
//! own, as here.
//!
//! This provider fails with a transport error on its first call, so
//! the gateway's retry is visible in the request counts.
//!
//! Run with: cargo run --example custom_provider

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use topicflow::gateway::{
    ChatProvider, ProviderError, RawCompletion, RetryPolicy,
};
use topicflow::{CompletionRequest, Gateway};

/// Replies with a canned topic line; flaky on the first call.
struct FlakyTopicProvider {
    calls: AtomicUsize,
}

impl ChatProvider for FlakyTopicProvider {
    fn name(&self) -> &str {
        "flaky-canned"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<RawCompletion, ProviderError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) == 0 {
            return Err(ProviderError::Transport("connection reset".into()));
        }
        let text = "[1] Energy: Mentions power generation and fuel policy.".to_string();
        Ok(RawCompletion {
            prompt_tokens: (request.prompt.len() / 4) as u64,
            completion_tokens: (text.len() / 4) as u64,
            text,
            meta: Default::default(),
        })
    }
}

fn main() {
    let gateway = Gateway::new(Arc::new(FlakyTopicProvider {
        calls: AtomicUsize::new(0),
    }))
    .with_retry(RetryPolicy {
        max_attempts: 3,
        base_delay_ms: 1,
        max_delay_ms: 10,
    })
    .with_max_inflight(2)
    .with_rate("demo-model", 0.03);

    println!("provider: {}", gateway.provider_name());

    let request = CompletionRequest::new("demo-model", "Identify the topics in this document.");
    let response = gateway.complete(&request).expect("retry covers one failure");

    println!("response: {}", response.text);
    println!(
        "this call took {} attempt(s), {} prompt + {} completion tokens",
        response.usage.request_count, response.usage.prompt_tokens, response.usage.completion_tokens
    );

    let totals = gateway.usage_report();
    println!(
        "gateway totals: {} requests (includes the failed attempt), cost {:.6}",
        totals.request_count, totals.estimated_cost
    );
    for (model, usage) in gateway.usage_by_model() {
        println!(
            "  {model}: {} prompt + {} completion tokens, {} completions",
            usage.prompt_tokens, usage.completion_tokens, usage.request_count
        );
    }
}
