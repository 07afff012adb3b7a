//! Scored text generation and text embedding providers.
//!
//! Each contract has a live HTTP implementation, a recorded-replay one and
//! (for generation) a deterministic stub. All providers are `Send + Sync` and
//! read-only after construction, so one instance serves a whole batch.

mod embed;
mod live;
mod replay;
mod stub;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use sbmpa_core::ScoredResponse;

pub use embed::{EmbeddingFixture, FixtureEmbedder, LiveEmbedder, LiveEmbedderConfig};
pub use live::{HttpSettings, LiveConfig, LiveGenerator};
pub use replay::{ReplayFixture, ReplayGenerator};
pub use stub::StubGenerator;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationRequest {
    pub prompt: String,
    /// View to condition on; absent for text-only (LLM mode) queries.
    pub image_ref: Option<String>,
    pub num_candidates: usize,
}

impl GenerationRequest {
    pub fn replay_key(&self) -> String {
        replay_key(&self.prompt, self.image_ref.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    /// Sorted by score, highest first.
    pub candidates: Vec<ScoredResponse>,
    pub backend_id: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("request timed out after {0} ms")]
    Timeout(u64),
    #[error("protocol error: {0}")]
    ProtocolError(String),
    #[error("replay fixture has no entry for key {0}")]
    ReplayMiss(String),
    #[error("embedding fixture has no entry for {0:?}")]
    EmbedderMiss(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl BackendError {
    /// Transport failures and timeouts are worth retrying; nothing else is.
    pub fn is_transient(&self) -> bool {
        matches!(self, BackendError::Transport(_) | BackendError::Timeout(_))
    }
}

/// Anything that returns scored candidates for a prompt and optional image.
pub trait ScoredGenerator: Send + Sync {
    fn backend_id(&self) -> &str;

    fn generate_scored(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError>;
}

impl<G: ScoredGenerator + ?Sized> ScoredGenerator for &G {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }

    fn generate_scored(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        (**self).generate_scored(request)
    }
}

impl<G: ScoredGenerator + ?Sized> ScoredGenerator for Box<G> {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }

    fn generate_scored(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        (**self).generate_scored(request)
    }
}

/// Content address of a request: SHA-256 of prompt, a zero byte, then the image reference.
pub fn replay_key(prompt: &str, image_ref: Option<&str>) -> String {
    let mut h = Sha256::new();
    h.update(prompt.as_bytes());
    h.update([0u8]);
    h.update(image_ref.unwrap_or("").as_bytes());
    hex::encode(h.finalize())
}

pub(crate) fn check_request(request: &GenerationRequest) -> Result<(), BackendError> {
    if request.num_candidates == 0 {
        return Err(BackendError::InvalidRequest("num_candidates must be at least 1".into()));
    }
    Ok(())
}

/// Sorts by descending score (stable), truncates to `n` and rejects non-finite or blank candidates.
pub(crate) fn finish_candidates(
    mut candidates: Vec<ScoredResponse>,
    n: usize,
) -> Result<Vec<ScoredResponse>, BackendError> {
    if let Some(c) = candidates.iter().find(|c| !c.score.is_finite()) {
        return Err(BackendError::ProtocolError(format!("non-finite score for {:?}", c.text)));
    }
    candidates.retain(|c| !c.text.trim().is_empty());
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score));
    candidates.truncate(n);
    Ok(candidates)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BatchError {
    #[error("batch aborted: max_in_flight must be at least 1")]
    BatchAborted,
}

/// Runs every request with at most `max_in_flight` outstanding at once.
///
/// Results line up with `requests`; one failure does not stop the others.
pub fn batch_generate<G: ScoredGenerator + ?Sized>(
    generator: &G,
    requests: &[GenerationRequest],
    max_in_flight: usize,
) -> Result<Vec<Result<GenerationResult, BackendError>>, BatchError> {
    if max_in_flight == 0 {
        return Err(BatchError::BatchAborted);
    }
    let slots: Vec<Mutex<Option<Result<GenerationResult, BackendError>>>> =
        requests.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = max_in_flight.min(requests.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(request) = requests.get(i) else { break };
                let result = generator.generate_scored(request);
                *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(result);
            });
        }
    });
    Ok(slots
        .into_iter()
        .map(|s| {
            s.into_inner()
                .unwrap_or_else(|e| e.into_inner())
                .expect("every request is processed before the scope ends")
        })
        .collect())
}

/// Wraps a generator and keeps every successful exchange as a replay fixture.
pub struct Recorder<G> {
    inner: G,
    recorded: Mutex<std::collections::BTreeMap<String, ReplayFixture>>,
}

impl<G: ScoredGenerator> Recorder<G> {
    pub fn new(inner: G) -> Self {
        Recorder { inner, recorded: Mutex::new(Default::default()) }
    }

    /// Recorded fixtures ordered by key.
    pub fn fixtures(&self) -> Vec<ReplayFixture> {
        self.recorded.lock().unwrap_or_else(|e| e.into_inner()).values().cloned().collect()
    }
}

impl<G: ScoredGenerator> ScoredGenerator for Recorder<G> {
    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }

    fn generate_scored(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        let result = self.inner.generate_scored(request)?;
        let fixture = ReplayFixture {
            key: request.replay_key(),
            prompt: request.prompt.clone(),
            image_ref: request.image_ref.clone(),
            backend_id: result.backend_id.clone(),
            candidates: result.candidates.clone(),
        };
        self.recorded.lock().unwrap_or_else(|e| e.into_inner()).insert(fixture.key.clone(), fixture);
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_key_separates_prompt_and_image() {
        let a = replay_key("ab", Some("c"));
        let b = replay_key("a", Some("bc"));
        assert_ne!(a, b);
        assert_eq!(replay_key("p", None), replay_key("p", Some("")));
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn finish_sorts_and_truncates() {
        let c = finish_candidates(
            vec![ScoredResponse::new("b", -2.0), ScoredResponse::new("a", -1.0), ScoredResponse::new("c", -3.0)],
            2,
        )
        .unwrap();
        assert_eq!(c.iter().map(|c| c.text.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert!(finish_candidates(vec![ScoredResponse::new("a", f64::NAN)], 1).is_err());
    }
}
