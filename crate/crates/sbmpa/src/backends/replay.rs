//! Recorded exchanges played back by content address.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use sbmpa_core::ScoredResponse;

use super::{check_request, finish_candidates, replay_key, BackendError, GenerationRequest, GenerationResult, ScoredGenerator};
use crate::store::Record;

/// One recorded request and the candidates it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayFixture {
    pub key: String,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    pub backend_id: String,
    pub candidates: Vec<ScoredResponse>,
}

impl Record for ReplayFixture {
    const KIND: &'static str = "replay_fixture";

    fn check(&self) -> Result<(), String> {
        let expected = replay_key(&self.prompt, self.image_ref.as_deref());
        if self.key != expected {
            return Err(format!("key {} does not match content (expected {expected})", self.key));
        }
        if self.candidates.iter().any(|c| !c.score.is_finite()) {
            return Err("candidate score is not finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ReplayGenerator {
    table: BTreeMap<String, ReplayFixture>,
    backend_id: String,
}

impl ReplayGenerator {
    /// Builds the lookup table. All fixtures must come from one backend.
    pub fn new(fixtures: Vec<ReplayFixture>) -> Result<Self, String> {
        let mut backend_id: Option<String> = None;
        let mut table = BTreeMap::new();
        for f in fixtures {
            match &backend_id {
                None => backend_id = Some(f.backend_id.clone()),
                Some(b) if *b != f.backend_id => {
                    return Err(format!("replay fixtures mix backends {b:?} and {:?}", f.backend_id))
                }
                Some(_) => {}
            }
            if let Some(existing) = table.get(&f.key) {
                if *existing != f {
                    return Err(format!("conflicting replay fixtures for key {}", f.key));
                }
                continue;
            }
            table.insert(f.key.clone(), f);
        }
        Ok(ReplayGenerator { table, backend_id: backend_id.unwrap_or_else(|| "replay".into()) })
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl ScoredGenerator for ReplayGenerator {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn generate_scored(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        check_request(request)?;
        let key = request.replay_key();
        let fixture = self.table.get(&key).ok_or(BackendError::ReplayMiss(key))?;
        Ok(GenerationResult {
            candidates: finish_candidates(fixture.candidates.clone(), request.num_candidates)?,
            backend_id: fixture.backend_id.clone(),
            latency_ms: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(prompt: &str, image: Option<&str>, backend: &str) -> ReplayFixture {
        ReplayFixture {
            key: replay_key(prompt, image),
            prompt: prompt.into(),
            image_ref: image.map(Into::into),
            backend_id: backend.into(),
            candidates: (0..5).map(|i| ScoredResponse::new(format!("c{i}"), -(i as f64))).collect(),
        }
    }

    #[test]
    fn replays_exact_candidates() {
        let f = fixture("What is this?", Some("a.png"), "b");
        let g = ReplayGenerator::new(vec![f.clone()]).unwrap();
        let r = g
            .generate_scored(&GenerationRequest {
                prompt: "What is this?".into(),
                image_ref: Some("a.png".into()),
                num_candidates: 5,
            })
            .unwrap();
        assert_eq!(r.candidates, f.candidates);
        assert_eq!(r.backend_id, "b");
    }

    #[test]
    fn miss_names_key() {
        let g = ReplayGenerator::new(vec![]).unwrap();
        let req = GenerationRequest { prompt: "p".into(), image_ref: None, num_candidates: 1 };
        assert_eq!(g.generate_scored(&req), Err(BackendError::ReplayMiss(replay_key("p", None))));
    }

    #[test]
    fn mixed_backends_rejected() {
        assert!(ReplayGenerator::new(vec![fixture("a", None, "x"), fixture("b", None, "y")]).is_err());
        let mut f = fixture("a", None, "x");
        f.key = "00".into();
        assert!(f.check().is_err());
    }
}
