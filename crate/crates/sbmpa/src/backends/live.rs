//! JSON-over-HTTP client for a remote scoring endpoint.
//!
//! Default wire shape: `POST {prompt, image, n}` answered by
//! `{candidates: [{text, logprob}]}`. Field names and the path to the
//! candidate list are configurable for servers with other shapes.

use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use sbmpa_core::ScoredResponse;

use super::{check_request, finish_candidates, BackendError, GenerationRequest, GenerationResult, ScoredGenerator};

/// Connection settings shared by the generation and embedding clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpSettings {
    pub base_url: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_attempts")]
    pub attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_attempts() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    250
}

impl HttpSettings {
    pub fn new(base_url: impl Into<String>) -> Self {
        HttpSettings {
            base_url: base_url.into(),
            api_key: None,
            timeout_ms: default_timeout_ms(),
            attempts: default_attempts(),
            backoff_ms: default_backoff_ms(),
        }
    }

    /// Applies `BASE_URL`, `API_KEY` and `TIMEOUT_MS` from `env` when set.
    pub fn apply_env(&mut self, env: impl Fn(&str) -> Option<String>) -> Result<(), String> {
        if let Some(v) = env("BASE_URL") {
            self.base_url = v;
        }
        if let Some(v) = env("API_KEY") {
            self.api_key = Some(v);
        }
        if let Some(v) = env("TIMEOUT_MS") {
            self.timeout_ms = v.parse().map_err(|_| format!("TIMEOUT_MS must be an integer, got {v:?}"))?;
        }
        Ok(())
    }
}

pub(crate) struct HttpClient {
    settings: HttpSettings,
    agent: ureq::Agent,
}

const BODY_EXCERPT: usize = 200;

fn excerpt(body: &str) -> &str {
    match body.char_indices().nth(BODY_EXCERPT) {
        Some((i, _)) => &body[..i],
        None => body,
    }
}

impl HttpClient {
    pub(crate) fn new(settings: HttpSettings) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(settings.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpClient { settings, agent }
    }

    fn post_once(&self, body: &Value) -> Result<Value, BackendError> {
        let mut req = self.agent.post(&self.settings.base_url);
        if let Some(key) = &self.settings.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| self.classify(e))?;
        let status = resp.status();
        let text = resp.body_mut().read_to_string().map_err(|e| self.classify(e))?;
        if !status.is_success() {
            return Err(BackendError::ProtocolError(format!("HTTP {}: {}", status.as_u16(), excerpt(&text))));
        }
        serde_json::from_str(&text)
            .map_err(|e| BackendError::ProtocolError(format!("invalid JSON ({e}): {}", excerpt(&text))))
    }

    fn classify(&self, e: ureq::Error) -> BackendError {
        match e {
            ureq::Error::Timeout(_) => BackendError::Timeout(self.settings.timeout_ms),
            ureq::Error::StatusCode(code) => BackendError::ProtocolError(format!("HTTP {code}")),
            ureq::Error::Json(e) => BackendError::ProtocolError(e.to_string()),
            other => BackendError::Transport(other.to_string()),
        }
    }

    /// POSTs `body`, retrying transient failures with exponential backoff.
    pub(crate) fn post_json(&self, body: &Value) -> Result<Value, BackendError> {
        let attempts = self.settings.attempts.max(1);
        let mut delay = Duration::from_millis(self.settings.backoff_ms);
        let mut attempt = 1;
        loop {
            match self.post_once(body) {
                Err(e) if e.is_transient() && attempt < attempts => {
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Follows a dot-separated path through objects (and arrays, by index).
pub(crate) fn lookup<'a>(value: &'a Value, path: &str) -> Option<&'a Value> {
    if path.is_empty() {
        return Some(value);
    }
    path.split('.').try_fold(value, |v, part| match v {
        Value::Object(m) => m.get(part),
        Value::Array(a) => part.parse::<usize>().ok().and_then(|i| a.get(i)),
        _ => None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiveConfig {
    #[serde(flatten)]
    pub http: HttpSettings,
    #[serde(default = "default_backend_id")]
    pub backend_id: String,
    #[serde(default = "default_prompt_field")]
    pub prompt_field: String,
    #[serde(default = "default_image_field")]
    pub image_field: String,
    #[serde(default = "default_n_field")]
    pub n_field: String,
    #[serde(default = "default_candidates_path")]
    pub candidates_path: String,
    #[serde(default = "default_text_field")]
    pub text_field: String,
    #[serde(default = "default_score_field")]
    pub score_field: String,
}

fn default_backend_id() -> String {
    "live".into()
}
fn default_prompt_field() -> String {
    "prompt".into()
}
fn default_image_field() -> String {
    "image".into()
}
fn default_n_field() -> String {
    "n".into()
}
fn default_candidates_path() -> String {
    "candidates".into()
}
fn default_text_field() -> String {
    "text".into()
}
fn default_score_field() -> String {
    "logprob".into()
}

impl LiveConfig {
    pub fn new(http: HttpSettings) -> Self {
        LiveConfig {
            http,
            backend_id: default_backend_id(),
            prompt_field: default_prompt_field(),
            image_field: default_image_field(),
            n_field: default_n_field(),
            candidates_path: default_candidates_path(),
            text_field: default_text_field(),
            score_field: default_score_field(),
        }
    }
}

pub struct LiveGenerator {
    config: LiveConfig,
    client: HttpClient,
}

impl LiveGenerator {
    pub fn new(config: LiveConfig) -> Self {
        let client = HttpClient::new(config.http.clone());
        LiveGenerator { config, client }
    }

    /// URLs and data URIs pass through; anything else is read as a file and base64-encoded.
    fn encode_image(image_ref: &str) -> Result<String, BackendError> {
        if ["http://", "https://", "data:"].iter().any(|p| image_ref.starts_with(p)) {
            return Ok(image_ref.to_string());
        }
        let bytes = std::fs::read(image_ref)
            .map_err(|e| BackendError::InvalidRequest(format!("cannot read image {image_ref:?}: {e}")))?;
        Ok(base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    fn parse_candidates(&self, body: &Value) -> Result<Vec<ScoredResponse>, BackendError> {
        let shape = |what: &str| {
            BackendError::ProtocolError(format!("{what}: {}", excerpt(&body.to_string())))
        };
        let list = lookup(body, &self.config.candidates_path)
            .and_then(Value::as_array)
            .ok_or_else(|| shape(&format!("no candidate list at {:?}", self.config.candidates_path)))?;
        list.iter()
            .map(|c| {
                let text = lookup(c, &self.config.text_field).and_then(Value::as_str);
                let score = lookup(c, &self.config.score_field).and_then(Value::as_f64);
                match (text, score) {
                    (Some(t), Some(s)) => Ok(ScoredResponse::new(t, s)),
                    _ => Err(shape("candidate lacks text or score")),
                }
            })
            .collect()
    }
}

impl ScoredGenerator for LiveGenerator {
    fn backend_id(&self) -> &str {
        &self.config.backend_id
    }

    fn generate_scored(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        check_request(request)?;
        let mut body = Map::new();
        body.insert(self.config.prompt_field.clone(), Value::String(request.prompt.clone()));
        if let Some(image) = &request.image_ref {
            body.insert(self.config.image_field.clone(), Value::String(Self::encode_image(image)?));
        }
        body.insert(self.config.n_field.clone(), Value::from(request.num_candidates));
        let started = Instant::now();
        let response = self.client.post_json(&Value::Object(body))?;
        let latency_ms = started.elapsed().as_millis() as u64;
        Ok(GenerationResult {
            candidates: finish_candidates(self.parse_candidates(&response)?, request.num_candidates)?,
            backend_id: self.config.backend_id.clone(),
            latency_ms,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn path_lookup() {
        let v = json!({"a": {"b": [{"c": 1}]}});
        assert_eq!(lookup(&v, "a.b.0.c"), Some(&json!(1)));
        assert_eq!(lookup(&v, "a.x"), None);
        assert_eq!(lookup(&v, ""), Some(&v));
    }

    #[test]
    fn env_overrides() {
        let mut s = HttpSettings::new("http://a");
        s.apply_env(|k| match k {
            "BASE_URL" => Some("http://b".into()),
            "TIMEOUT_MS" => Some("10".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!((s.base_url.as_str(), s.timeout_ms, s.api_key.as_deref()), ("http://b", 10, None));
        assert!(s.apply_env(|_| Some("x".into())).is_err());
    }

    #[test]
    fn excerpt_is_char_safe() {
        let long = "é".repeat(500);
        assert_eq!(excerpt(&long).chars().count(), BODY_EXCERPT);
    }
}
