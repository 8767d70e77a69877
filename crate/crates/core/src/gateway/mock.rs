use std::sync::atomic::{AtomicUsize, Ordering};

use super::{BackendKind, CompletionRequest, CompletionResponse, ModelBackend};
use crate::error::{Error, Result};
use crate::prompt::token_estimate;

type ReplyFn = dyn Fn(&CompletionRequest) -> Result<String> + Send + Sync;

/// Scriptable in-process backend.
pub struct MockBackend {
    reply: Box<ReplyFn>,
    latency_seconds: f64,
}

impl MockBackend {
    pub fn from_fn(
        f: impl Fn(&CompletionRequest) -> Result<String> + Send + Sync + 'static,
    ) -> Self {
        MockBackend {
            reply: Box::new(f),
            latency_seconds: 0.0,
        }
    }

    /// Always answers `text`.
    pub fn echo(text: impl Into<String>) -> Self {
        let text = text.into();
        Self::from_fn(move |_| Ok(text.clone()))
    }

    /// Answers with `replies` in order, then errors.
    pub fn sequence(replies: Vec<String>) -> Self {
        let next = AtomicUsize::new(0);
        Self::from_fn(move |_| {
            let i = next.fetch_add(1, Ordering::SeqCst);
            replies.get(i).cloned().ok_or_else(|| Error::Backend {
                attempts: 1,
                cause: "mock sequence exhausted".into(),
            })
        })
    }

    /// Answers with the value whose key is the longest substring of the prompt.
    pub fn lookup(table: Vec<(String, String)>) -> Self {
        Self::from_fn(move |req| {
            table
                .iter()
                .filter(|(k, _)| req.prompt.contains(k.as_str()))
                .max_by_key(|(k, _)| k.len())
                .map(|(_, v)| v.clone())
                .ok_or_else(|| Error::Backend {
                    attempts: 1,
                    cause: "no scripted reply matches the prompt".into(),
                })
        })
    }

    pub fn with_latency(mut self, seconds: f64) -> Self {
        self.latency_seconds = seconds;
        self
    }
}

impl ModelBackend for MockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse> {
        let text = (self.reply)(request)?;
        Ok(CompletionResponse {
            model_id: request.model_id.clone(),
            input_tokens: token_estimate(&request.prompt) as u64,
            output_tokens: token_estimate(&text) as u64,
            text,
            latency_seconds: self.latency_seconds,
            backend_kind: BackendKind::Mock,
            usage_estimated: true,
        })
    }
}
