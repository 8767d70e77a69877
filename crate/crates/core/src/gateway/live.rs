use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{BackendKind, CompletionRequest, CompletionResponse, ModelBackend};
use crate::error::{Error, Result};
use crate::io::InFlightLimit;
use crate::prompt::token_estimate;

/// Environment variable holding the chat-completion API key.
pub const API_KEY_VAR: &str = "KQLFORGE_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveConfig {
    /// OpenAI-compatible chat completions URL.
    pub endpoint: String,
    pub max_in_flight: usize,
    pub retries: u32,
    pub initial_backoff_ms: u64,
    pub timeout_seconds: u64,
}

impl Default for LiveConfig {
    fn default() -> Self {
        LiveConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            max_in_flight: 8,
            retries: 3,
            initial_backoff_ms: 500,
            timeout_seconds: 120,
        }
    }
}

pub struct LiveBackend {
    config: LiveConfig,
    key: String,
    client: reqwest::blocking::Client,
    limit: InFlightLimit,
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

enum Failure {
    Retry(String),
    Fatal(Error),
}

impl LiveBackend {
    pub fn from_env(config: LiveConfig) -> Result<Self> {
        let key = std::env::var(API_KEY_VAR)
            .map_err(|_| Error::Config(format!("{API_KEY_VAR} is not set")))?;
        Self::with_key(config, key)
    }

    pub fn with_key(config: LiveConfig, key: String) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_seconds))
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(LiveBackend {
            limit: InFlightLimit::new(config.max_in_flight),
            config,
            key,
            client,
        })
    }

    fn attempt(
        &self,
        request: &CompletionRequest,
    ) -> std::result::Result<CompletionResponse, Failure> {
        let _permit = self.limit.acquire();
        let body = serde_json::json!({
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let started = Instant::now();
        let resp = self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(&self.key)
            .json(&body)
            .send()
            .map_err(|e| Failure::Retry(e.to_string()))?;
        let status = resp.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(Failure::Fatal(Error::Auth(format!(
                "HTTP {status} from {}",
                self.config.endpoint
            ))));
        }
        let bytes = resp.bytes().map_err(|e| Failure::Retry(e.to_string()))?;
        let latency_seconds = started.elapsed().as_secs_f64();
        if status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS {
            return Err(Failure::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(Failure::Fatal(Error::Backend {
                attempts: 1,
                cause: format!("HTTP {status}: {}", String::from_utf8_lossy(&bytes)),
            }));
        }
        let reply: ChatReply = serde_json::from_slice(&bytes)
            .map_err(|e| Failure::Retry(format!("malformed reply: {e}")))?;
        let text = reply
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        let (input_tokens, output_tokens, usage_estimated) = match reply.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens, false),
            None => (
                token_estimate(&request.prompt) as u64,
                token_estimate(&text) as u64,
                true,
            ),
        };
        Ok(CompletionResponse {
            model_id: request.model_id.clone(),
            text,
            input_tokens,
            output_tokens,
            latency_seconds,
            backend_kind: BackendKind::Live,
            usage_estimated,
        })
    }
}

impl ModelBackend for LiveBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Live
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse> {
        let attempts = self.config.retries.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.attempt(request) {
                Ok(r) => return Ok(r),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(cause)) => {
                    log::warn!(
                        "{} attempt {attempt}/{attempts} failed: {cause}",
                        request.model_id
                    );
                    last = cause;
                    if attempt < attempts {
                        let backoff = self
                            .config
                            .initial_backoff_ms
                            .saturating_mul(1 << (attempt - 1).min(16));
                        std::thread::sleep(Duration::from_millis(backoff));
                    }
                }
            }
        }
        Err(Error::Backend {
            attempts,
            cause: last,
        })
    }
}
