//! Chat-completion backends with token and latency accounting.

mod live;
mod mock;
mod pricing;
mod replay;
mod simulated;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use live::{LiveBackend, LiveConfig, API_KEY_VAR};
pub use mock::MockBackend;
pub use pricing::{cost_of, cost_of_response, Price, PriceTable};
pub use replay::{
    prompt_sha256, FixtureKey, FixtureResponse, RecordingBackend, ReplayBackend, ReplayFixture,
};
pub use simulated::SimulatedBackend;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Index among repeated samples of the same prompt; part of the replay key.
    #[serde(default)]
    pub sample: u32,
    /// Correlation id; not part of any fixture key.
    pub request_tag: String,
}

impl CompletionRequest {
    pub fn new(model_id: impl Into<String>, prompt: impl Into<String>, temperature: f64) -> Self {
        CompletionRequest {
            model_id: model_id.into(),
            prompt: prompt.into(),
            temperature,
            max_output_tokens: 1024,
            sample: 0,
            request_tag: String::new(),
        }
    }

    pub fn with_sample(mut self, sample: u32) -> Self {
        self.sample = sample;
        self
    }

    pub fn tagged(mut self, tag: impl Into<String>) -> Self {
        self.request_tag = tag.into();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Live,
    Replay,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub model_id: String,
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency_seconds: f64,
    pub backend_kind: BackendKind,
    /// Token counts came from the local estimator, not the provider.
    #[serde(default)]
    pub usage_estimated: bool,
}

/// A model endpoint. Implementations must tolerate concurrent calls.
pub trait ModelBackend: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse>;
}

impl<B: ModelBackend + ?Sized> ModelBackend for std::sync::Arc<B> {
    fn kind(&self) -> BackendKind {
        (**self).kind()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse> {
        (**self).complete(request)
    }
}

impl<B: ModelBackend + ?Sized> ModelBackend for &B {
    fn kind(&self) -> BackendKind {
        (**self).kind()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse> {
        (**self).complete(request)
    }
}

/// Validates `request` and sends it to `backend`.
pub fn complete(
    request: &CompletionRequest,
    backend: &dyn ModelBackend,
) -> Result<CompletionResponse> {
    if request.prompt.is_empty() {
        return Err(Error::Invalid("prompt is empty".into()));
    }
    if request.temperature.is_nan() || request.temperature < 0.0 {
        return Err(Error::Invalid(format!(
            "temperature {} is negative",
            request.temperature
        )));
    }
    backend.complete(request)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_validates_requests() {
        let m = MockBackend::echo("T | take 1");
        assert!(complete(&CompletionRequest::new("m", "", 1.0), &m).is_err());
        assert!(complete(&CompletionRequest::new("m", "p", -0.1), &m).is_err());
        assert!(complete(&CompletionRequest::new("m", "p", f64::NAN), &m).is_err());
        let r = complete(&CompletionRequest::new("m", "p", 0.0), &m).unwrap();
        assert_eq!(r.text, "T | take 1");
        assert_eq!(r.backend_kind, BackendKind::Mock);
    }
}
