//! Deterministic stand-in for a real model.

use sha2::{Digest, Sha256};

use sbmpa_core::ScoredResponse;

use super::{check_request, BackendError, GenerationRequest, GenerationResult, ScoredGenerator};

const TYPE_WORDS: &[&str] = &[
    "chair",
    "A chair.",
    "wooden chair",
    "table",
    "a table",
    "lamp",
    "desk lamp",
    "sword",
    "a sword, weapon",
    "vase",
    "teapot",
    "mug",
    "spoon",
    "bowl",
];

const MATERIAL_WORDS: &[&str] =
    &["wood", "Wood.", "oak wood", "metal", "steel", "plastic", "ceramic", "glass", "fabric", "stone"];

const YES_NO_WORDS: &[&str] = &["yes", "Yes.", "no", "No.", "maybe"];

/// Lowest score the stub ever emits.
pub const STUB_MIN_SCORE: f64 = -5.0;

/// Candidates and scores drawn from a SHA-256 stream over (seed, prompt, image).
///
/// The same request always gets the same answer on every platform. Scores
/// lie in `[-5, 0]` and strictly decrease along the list.
#[derive(Debug, Clone)]
pub struct StubGenerator {
    seed: u64,
    backend_id: String,
}

impl StubGenerator {
    pub fn new(seed: u64) -> Self {
        StubGenerator { seed, backend_id: format!("stub-{seed}") }
    }

    fn vocabulary(prompt: &str) -> &'static [&'static str] {
        let p = prompt.to_lowercase();
        if p.contains("material") || p.contains("made of") {
            MATERIAL_WORDS
        } else if ["is ", "can ", "does ", "are "].iter().any(|w| p.starts_with(w)) {
            YES_NO_WORDS
        } else {
            TYPE_WORDS
        }
    }
}

struct HashStream {
    root: [u8; 32],
    counter: u64,
    buf: Vec<u64>,
}

impl HashStream {
    fn new(seed: u64, request: &GenerationRequest) -> Self {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(request.prompt.as_bytes());
        h.update([0u8]);
        h.update(request.image_ref.as_deref().unwrap_or("").as_bytes());
        HashStream { root: h.finalize().into(), counter: 0, buf: Vec::new() }
    }

    fn next_u64(&mut self) -> u64 {
        if self.buf.is_empty() {
            let mut h = Sha256::new();
            h.update(self.root);
            h.update(self.counter.to_le_bytes());
            self.counter += 1;
            let block: [u8; 32] = h.finalize().into();
            self.buf = block
                .chunks_exact(8)
                .rev()
                .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
        }
        self.buf.pop().expect("refilled above")
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

impl ScoredGenerator for StubGenerator {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn generate_scored(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        check_request(request)?;
        let vocab = Self::vocabulary(&request.prompt);
        let n = request.num_candidates.min(vocab.len());
        let mut stream = HashStream::new(self.seed, request);
        // Partial Fisher-Yates over the vocabulary indices.
        let mut order: Vec<usize> = (0..vocab.len()).collect();
        for i in 0..n {
            let j = i + (stream.next_u64() % (vocab.len() - i) as u64) as usize;
            order.swap(i, j);
        }
        // Candidate k lands in (-5(k+1)/n, -5k/n], so the list strictly decreases.
        let candidates = order[..n]
            .iter()
            .enumerate()
            .map(|(k, &w)| {
                let score = STUB_MIN_SCORE * (k as f64 + stream.next_unit()) / n as f64;
                ScoredResponse::new(vocab[w], score)
            })
            .collect();
        Ok(GenerationResult { candidates, backend_id: self.backend_id.clone(), latency_ms: 0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(prompt: &str, image: Option<&str>, n: usize) -> GenerationRequest {
        GenerationRequest { prompt: prompt.into(), image_ref: image.map(Into::into), num_candidates: n }
    }

    #[test]
    fn deterministic_and_bounded() {
        let stub = StubGenerator::new(0);
        let a = stub.generate_scored(&req("What is this?", Some("v0.png"), 5)).unwrap();
        let b = stub.generate_scored(&req("What is this?", Some("v0.png"), 5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.candidates.len(), 5);
        for w in a.candidates.windows(2) {
            assert!(w[0].score > w[1].score);
        }
        assert!(a.candidates.iter().all(|c| (STUB_MIN_SCORE..=0.0).contains(&c.score)));
    }

    #[test]
    fn seed_and_image_change_output() {
        let r = req("What is this?", Some("v0.png"), 5);
        let a = StubGenerator::new(0).generate_scored(&r).unwrap();
        let b = StubGenerator::new(1).generate_scored(&r).unwrap();
        let c = StubGenerator::new(0).generate_scored(&req("What is this?", Some("v1.png"), 5)).unwrap();
        assert_ne!(a.candidates, b.candidates);
        assert_ne!(a.candidates, c.candidates);
    }

    #[test]
    fn vocabulary_follows_question() {
        let stub = StubGenerator::new(3);
        let m = stub.generate_scored(&req("What material is this made of?", None, 3)).unwrap();
        assert!(m.candidates.iter().all(|c| MATERIAL_WORDS.contains(&c.text.as_str())));
        let y = stub.generate_scored(&req("Is this fragile?", None, 9)).unwrap();
        assert_eq!(y.candidates.len(), YES_NO_WORDS.len());
        assert!(stub.generate_scored(&req("x", None, 0)).is_err());
    }
}
