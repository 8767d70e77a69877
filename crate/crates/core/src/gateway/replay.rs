use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendKind, CompletionRequest, CompletionResponse, ModelBackend};
use crate::error::{Error, Result};

pub fn prompt_sha256(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureKey {
    pub model: String,
    pub prompt_sha256: String,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub sample: u32,
}

fn is_zero(n: &u32) -> bool {
    *n == 0
}

impl FixtureKey {
    pub fn for_request(r: &CompletionRequest) -> Self {
        FixtureKey {
            model: r.model_id.clone(),
            prompt_sha256: prompt_sha256(&r.prompt),
            temperature: r.temperature,
            sample: r.sample,
        }
    }

    fn index(&self) -> Index {
        (
            self.model.clone(),
            self.prompt_sha256.clone(),
            self.temperature.to_bits(),
            self.sample,
        )
    }

    fn missing(&self) -> Error {
        Error::UnrecordedRequest {
            model: self.model.clone(),
            prompt_sha256: self.prompt_sha256.clone(),
            temperature: self.temperature,
            sample: self.sample,
        }
    }
}

type Index = (String, String, u64, u32);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureResponse {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency_seconds: f64,
}

/// One recorded exchange, stored as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayFixture {
    pub key: FixtureKey,
    pub response: FixtureResponse,
}

/// Serves recorded responses keyed on (model, prompt hash, temperature).
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    fixtures: HashMap<Index, FixtureResponse>,
}

impl ReplayBackend {
    pub fn from_fixtures(fixtures: impl IntoIterator<Item = ReplayFixture>) -> Result<Self> {
        let mut map = HashMap::new();
        for f in fixtures {
            let idx = f.key.index();
            if let Some(prev) = map.get(&idx) {
                if prev != &f.response {
                    return Err(Error::Config(format!(
                        "conflicting fixtures for model={} prompt_sha256={} temperature={}",
                        f.key.model, f.key.prompt_sha256, f.key.temperature
                    )));
                }
            }
            map.insert(idx, f.response);
        }
        Ok(ReplayBackend { fixtures: map })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_fixtures(crate::dataset::read_jsonl::<ReplayFixture>(path)?)
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }
}

impl ModelBackend for ReplayBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse> {
        let key = FixtureKey::for_request(request);
        let r = self
            .fixtures
            .get(&key.index())
            .ok_or_else(|| key.missing())?;
        Ok(CompletionResponse {
            model_id: request.model_id.clone(),
            text: r.text.clone(),
            input_tokens: r.input_tokens,
            output_tokens: r.output_tokens,
            latency_seconds: r.latency_seconds,
            backend_kind: BackendKind::Replay,
            usage_estimated: false,
        })
    }
}

/// Passes requests to an inner backend and keeps every exchange as a fixture.
pub struct RecordingBackend<B> {
    inner: B,
    recorded: Mutex<BTreeMap<Index, ReplayFixture>>,
}

impl<B: ModelBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        RecordingBackend {
            inner,
            recorded: Mutex::new(BTreeMap::new()),
        }
    }

    /// Recorded fixtures, sorted by key.
    pub fn fixtures(&self) -> Vec<ReplayFixture> {
        self.recorded
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .values()
            .cloned()
            .collect()
    }

    /// Writes the recorded fixtures merged with any already in `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<usize> {
        let path = path.as_ref();
        let mut all: BTreeMap<Index, ReplayFixture> = BTreeMap::new();
        if path.exists() {
            for f in crate::dataset::read_jsonl::<ReplayFixture>(path)? {
                all.insert(f.key.index(), f);
            }
        }
        for f in self.fixtures() {
            all.insert(f.key.index(), f);
        }
        let rows: Vec<ReplayFixture> = all.into_values().collect();
        crate::dataset::write_jsonl(path, &rows)?;
        Ok(rows.len())
    }
}

impl<B: ModelBackend> ModelBackend for RecordingBackend<B> {
    fn kind(&self) -> BackendKind {
        self.inner.kind()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse> {
        let resp = self.inner.complete(request)?;
        let key = FixtureKey::for_request(request);
        let fixture = ReplayFixture {
            response: FixtureResponse {
                text: resp.text.clone(),
                input_tokens: resp.input_tokens,
                output_tokens: resp.output_tokens,
                latency_seconds: resp.latency_seconds,
            },
            key,
        };
        self.recorded
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(fixture.key.index(), fixture);
        Ok(resp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockBackend;

    #[test]
    fn record_then_replay() {
        let rec =
            RecordingBackend::new(MockBackend::echo("EmailEvents | take 5").with_latency(1.5));
        let a = CompletionRequest::new("phi-4", "prompt a", 1.0);
        let b = CompletionRequest::new("phi-4", "prompt a", 0.2);
        let live_a = rec.complete(&a).unwrap();
        rec.complete(&b).unwrap();
        rec.complete(&a).unwrap();
        rec.complete(&a.clone().with_sample(1)).unwrap();
        assert_eq!(rec.fixtures().len(), 3);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fx.jsonl");
        assert_eq!(rec.save(&p).unwrap(), 3);
        let replay = ReplayBackend::load(&p).unwrap();
        let r1 = replay.complete(&a).unwrap();
        let r2 = replay.complete(&a).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.text, live_a.text);
        assert_eq!(r1.input_tokens, live_a.input_tokens);
        assert_eq!(r1.latency_seconds, 1.5);
        assert_eq!(r1.backend_kind, BackendKind::Replay);
    }

    #[test]
    fn recorded_counts_are_reproduced() {
        let fx = ReplayFixture {
            key: FixtureKey {
                model: "gemini-2.0-flash".into(),
                prompt_sha256: prompt_sha256("p"),
                temperature: 1.0,
                sample: 0,
            },
            response: FixtureResponse {
                text: "T".into(),
                input_tokens: 812,
                output_tokens: 54,
                latency_seconds: 0.25,
            },
        };
        let line = serde_json::to_string(&fx).unwrap();
        assert!(line.starts_with("{\"key\":{\"model\":\"gemini-2.0-flash\",\"prompt_sha256\":"));
        let r = ReplayBackend::from_fixtures([fx])
            .unwrap()
            .complete(&CompletionRequest::new("gemini-2.0-flash", "p", 1.0))
            .unwrap();
        assert_eq!((r.input_tokens, r.output_tokens), (812, 54));
    }

    #[test]
    fn miss_names_the_key() {
        let err = ReplayBackend::default()
            .complete(&CompletionRequest::new("m", "hello", 0.7))
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unrecorded request"));
        assert!(msg.contains(&prompt_sha256("hello")));
        assert!(msg.contains("0.7"));
    }

    #[test]
    fn conflicting_fixtures_rejected() {
        let mk = |t: &str| ReplayFixture {
            key: FixtureKey {
                model: "m".into(),
                prompt_sha256: "x".into(),
                temperature: 1.0,
                sample: 0,
            },
            response: FixtureResponse {
                text: t.into(),
                input_tokens: 1,
                output_tokens: 1,
                latency_seconds: 0.0,
            },
        };
        assert!(ReplayBackend::from_fixtures([mk("a"), mk("a")]).is_ok());
        assert!(ReplayBackend::from_fixtures([mk("a"), mk("b")]).is_err());
    }
}
