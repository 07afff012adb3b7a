//! Cosine similarity through a pluggable text embedder.

use alloc::string::String;
use alloc::vec::Vec;

/// A fixed-dimension text embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f64>,
}

impl Embedding {
    pub fn new(vector: Vec<f64>) -> Self {
        Embedding { vector }
    }

    pub fn dimension(&self) -> usize {
        self.vector.len()
    }
}

/// Anything that maps text to a vector: a fixture table, a remote encoder, ...
pub trait EmbeddingProvider {
    type Error;

    fn embed(&self, text: &str) -> Result<Embedding, Self::Error>;

    /// Whether every vector this provider returns has unit norm.
    fn unit_norm(&self) -> bool {
        false
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for &P {
    type Error = P::Error;

    fn embed(&self, text: &str) -> Result<Embedding, Self::Error> {
        (**self).embed(text)
    }

    fn unit_norm(&self) -> bool {
        (**self).unit_norm()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimilarityError<E> {
    #[error("embedder failed: {0}")]
    Embedder(E),
    #[error("embedding of {0:?} has (near-)zero norm")]
    ZeroVector(String),
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("embedding of {0:?} has non-finite components")]
    NonFinite(String),
}

/// Below this norm a vector is treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    crate::numeric::neumaier_sum(a.iter().zip(b).map(|(x, y)| x * y))
}

/// Cosine similarity of two already-embedded vectors, clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let na = libm::sqrt(dot(a, a));
    let nb = libm::sqrt(dot(b, b));
    if na < ZERO_NORM || nb < ZERO_NORM {
        return None;
    }
    Some((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity between the embeddings of `a` and `b`.
pub fn embedding_similarity<P: EmbeddingProvider>(
    a: &str,
    b: &str,
    embedder: &P,
) -> Result<f64, SimilarityError<P::Error>> {
    let ea = embedder.embed(a).map_err(SimilarityError::Embedder)?;
    let eb = embedder.embed(b).map_err(SimilarityError::Embedder)?;
    for (text, e) in [(a, &ea), (b, &eb)] {
        if e.vector.iter().any(|x| !x.is_finite()) {
            return Err(SimilarityError::NonFinite(text.into()));
        }
    }
    if ea.dimension() != eb.dimension() {
        return Err(SimilarityError::DimensionMismatch(ea.dimension(), eb.dimension()));
    }
    for (text, e) in [(a, &ea), (b, &eb)] {
        if libm::sqrt(dot(&e.vector, &e.vector)) < ZERO_NORM {
            return Err(SimilarityError::ZeroVector(text.into()));
        }
    }
    if embedder.unit_norm() {
        return Ok(dot(&ea.vector, &eb.vector).clamp(-1.0, 1.0));
    }
    Ok(cosine(&ea.vector, &eb.vector).expect("dimensions and norms checked above"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeMap;
    use alloc::string::ToString;
    use alloc::vec;

    struct Table(BTreeMap<String, Vec<f64>>);

    impl EmbeddingProvider for Table {
        type Error = String;

        fn embed(&self, text: &str) -> Result<Embedding, String> {
            self.0.get(text).cloned().map(Embedding::new).ok_or_else(|| text.to_string())
        }
    }

    fn table() -> Table {
        Table(BTreeMap::from([
            ("a".to_string(), vec![1.0, 0.0]),
            ("b".to_string(), vec![0.0, 1.0]),
            ("c".to_string(), vec![3.0, 4.0]),
            ("z".to_string(), vec![0.0, 0.0]),
            ("d3".to_string(), vec![1.0, 0.0, 0.0]),
        ]))
    }

    #[test]
    fn identical_and_orthogonal() {
        let t = table();
        assert!((embedding_similarity("c", "c", &t).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(embedding_similarity("a", "b", &t).unwrap(), 0.0);
        assert!((embedding_similarity("a", "c", &t).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn failures() {
        let t = table();
        assert_eq!(embedding_similarity("a", "z", &t), Err(SimilarityError::ZeroVector("z".into())));
        assert_eq!(embedding_similarity("a", "d3", &t), Err(SimilarityError::DimensionMismatch(2, 3)));
        assert_eq!(embedding_similarity("a", "q", &t), Err(SimilarityError::Embedder("q".into())));
    }
}
