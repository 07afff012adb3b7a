//! Evaluation quantities: accuracy against labels, embedding similarity,
//! VLM/LLM divergence, divergence-accuracy fit and caption audits.

pub mod accuracy;
pub mod audit;
pub mod divergence;
pub mod fit;
pub mod similarity;

pub use accuracy::{
    evaluate_object, lvis_label_ruleset, soft_accuracy, soft_accuracy_with, summarize,
    tags_to_distribution, top_k_hit, EvalResult, EvalSummary, MatchKind, Matcher, MeanStd,
    ObjectEval, SoftRule, TagError, TopK,
};
pub use audit::{blow_up_ratio, keyword_audit, word_count, AuditError, KeywordAudit, KeywordRule, RuleCount};
pub use divergence::{
    align, divergence_report, hellinger, hellinger_maps, DivergenceError, DivergencePair,
    DivergenceReport, DivergenceRow, PairDistance,
};
pub use fit::{accuracy_divergence_fit, FitError, FitPoint, LinearFit};
pub use similarity::{cosine, embedding_similarity, Embedding, EmbeddingProvider, SimilarityError};
