//! Shared domain types and their validity checks.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::time::Timestamp;

/// One sampled text and its natural-log likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredResponse {
    pub text: String,
    pub score: f64,
}

impl ScoredResponse {
    pub fn new(text: impl Into<String>, score: f64) -> Self {
        ScoredResponse { text: text.into(), score }
    }
}

/// Whether the model saw an image (`vlm`) or only the question (`llm`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Vlm,
    Llm,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Vlm => "vlm",
            Mode::Llm => "llm",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "vlm" => Ok(Mode::Vlm),
            "llm" => Ok(Mode::Llm),
            other => Err(alloc::format!("unknown mode {other:?} (expected vlm or llm)")),
        }
    }
}

/// One model query (object, optional view, question, mode) with its scored responses.
///
/// `property` names what the question asks about ("type", "material", ...) and
/// `backend_id` identifies the provider that produced the scores; both are
/// optional on disk and used to group and guard aggregations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub object_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_id: Option<u32>,
    pub question_id: String,
    pub prompt_text: String,
    pub mode: Mode,
    pub responses: Vec<ScoredResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub property: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_id: Option<String>,
}

/// Property assumed for probe records that do not name one.
pub const DEFAULT_PROPERTY: &str = "type";

impl ProbeRecord {
    pub fn property(&self) -> &str {
        self.property.as_deref().unwrap_or(DEFAULT_PROPERTY)
    }
}

/// Returns every invariant violation of `record`; empty iff the record is valid.
pub fn validate_probe_record(record: &ProbeRecord) -> Vec<String> {
    let mut out = Vec::new();
    match (record.mode, record.view_id) {
        (Mode::Llm, Some(_)) => out.push("llm mode must not carry view_id".to_string()),
        (Mode::Vlm, None) => out.push("vlm mode requires view_id".to_string()),
        _ => {}
    }
    if record.responses.is_empty() {
        out.push("responses must be non-empty".to_string());
    }
    if record.question_id.is_empty() {
        out.push("question_id must be non-empty".to_string());
    }
    if record.object_id.is_empty() {
        out.push("object_id must be non-empty".to_string());
    }
    for (i, r) in record.responses.iter().enumerate() {
        if r.text.trim().is_empty() {
            out.push(alloc::format!("response {i} text is empty after trimming"));
        }
        if !r.score.is_finite() {
            out.push(alloc::format!("response {i} score is not finite"));
        }
    }
    out
}

/// A canonical response with its (possibly absent, i.e. `-inf`) score.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalScore {
    pub canonical: String,
    pub score: f64,
}

/// Where a distribution entry's mass came from: one raw response of one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_id: Option<u32>,
    pub question_id: String,
    pub raw_text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionEntry {
    pub canonical: String,
    pub agg_score: f64,
    pub prob: f64,
    #[serde(default)]
    pub provenance: Vec<Provenance>,
}

/// Normalized distribution over canonical responses for one (object, property).
///
/// Entries are sorted by probability descending, ties broken by canonical
/// string ascending (see [`entry_order`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateDistribution {
    pub object_id: String,
    pub property: String,
    pub entries: Vec<DistributionEntry>,
}

/// Order used for distribution entries: probability descending, then
/// aggregate score descending, then canonical ascending.
///
/// For softmax outputs equal probabilities come from equal scores, so the
/// middle key only matters for rank-carrying distributions such as tag lists.
pub fn entry_order(a: &DistributionEntry, b: &DistributionEntry) -> Ordering {
    b.prob
        .total_cmp(&a.prob)
        .then_with(|| b.agg_score.total_cmp(&a.agg_score))
        .then_with(|| a.canonical.cmp(&b.canonical))
}

impl AggregateDistribution {
    /// Likeliest canonical response (first entry).
    pub fn mode(&self) -> Option<&str> {
        self.entries.first().map(|e| e.canonical.as_str())
    }

    pub fn prob_of(&self, canonical: &str) -> f64 {
        self.entries
            .iter()
            .find(|e| e.canonical == canonical)
            .map_or(0.0, |e| e.prob)
    }

    pub fn total_mass(&self) -> f64 {
        crate::numeric::neumaier_sum(self.entries.iter().map(|e| e.prob))
    }

    pub fn sort_entries(&mut self) {
        self.entries.sort_by(entry_order);
    }
}

/// True iff probabilities sum to one within `tolerance`, entries are in
/// canonical order and canonical strings are pairwise distinct.
pub fn check_distribution(dist: &AggregateDistribution, tolerance: f64) -> bool {
    if tolerance.is_nan() || tolerance <= 0.0 {
        return false;
    }
    if dist
        .entries
        .iter()
        .any(|e| !(e.prob >= 0.0 && e.prob <= 1.0 + tolerance))
    {
        return false;
    }
    if libm::fabs(dist.total_mass() - 1.0) > tolerance {
        return false;
    }
    if dist
        .entries
        .windows(2)
        .any(|w| entry_order(&w[0], &w[1]) != Ordering::Less)
    {
        return false;
    }
    let mut seen = alloc::collections::BTreeSet::new();
    dist.entries.iter().all(|e| seen.insert(e.canonical.as_str()))
}

/// A ground-truth (object, property, label) triple.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelRecord {
    pub object_id: String,
    pub property: String,
    pub label: String,
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

impl core::str::FromStr for Decision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "accept" => Ok(Decision::Accept),
            "reject" => Ok(Decision::Reject),
            other => Err(alloc::format!("invalid decision {other:?} (expected accept or reject)")),
        }
    }
}

/// Annotator assumed when a decision does not name one.
pub const ANONYMOUS: &str = "anonymous";

fn anonymous() -> String {
    ANONYMOUS.to_string()
}

/// A human accept/reject verdict on a candidate (object, label) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationDecision {
    pub object_id: String,
    pub candidate_label: String,
    pub decision: Decision,
    #[serde(default = "anonymous")]
    pub annotator: String,
    pub timestamp: Timestamp,
}

/// Replays an append-only decision log; the last entry per (object, label) wins.
pub fn effective_decisions(
    log: &[CurationDecision],
) -> BTreeMap<(String, String), &CurationDecision> {
    let mut out = BTreeMap::new();
    for d in log {
        out.insert((d.object_id.clone(), d.candidate_label.clone()), d);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn record(mode: Mode, view_id: Option<u32>, n: usize) -> ProbeRecord {
        ProbeRecord {
            object_id: "obj".into(),
            view_id,
            question_id: "q0".into(),
            prompt_text: "What is this?".into(),
            mode,
            responses: (0..n)
                .map(|i| ScoredResponse::new(alloc::format!("r{i}"), -(i as f64)))
                .collect(),
            property: None,
            backend_id: None,
        }
    }

    fn entry(c: &str, p: f64) -> DistributionEntry {
        DistributionEntry { canonical: c.into(), agg_score: 0.0, prob: p, provenance: vec![] }
    }

    fn dist(entries: Vec<DistributionEntry>) -> AggregateDistribution {
        AggregateDistribution { object_id: "o".into(), property: "type".into(), entries }
    }

    #[test]
    fn llm_record_with_view_is_flagged() {
        assert_eq!(
            validate_probe_record(&record(Mode::Llm, Some(3), 5)),
            vec!["llm mode must not carry view_id".to_string()]
        );
    }

    #[test]
    fn empty_responses_flagged() {
        assert_eq!(
            validate_probe_record(&record(Mode::Vlm, Some(0), 0)),
            vec!["responses must be non-empty".to_string()]
        );
    }

    #[test]
    fn well_formed_vlm_record() {
        assert!(validate_probe_record(&record(Mode::Vlm, Some(1), 5)).is_empty());
    }

    #[test]
    fn non_finite_and_blank_responses_flagged() {
        let mut r = record(Mode::Llm, None, 2);
        r.responses[0].score = f64::NAN;
        r.responses[1].text = "   ".into();
        assert_eq!(validate_probe_record(&r).len(), 2);
    }

    #[test]
    fn distribution_checks() {
        assert!(check_distribution(&dist(vec![entry("a", 1.0)]), 1e-9));
        assert!(!check_distribution(&dist(vec![entry("a", 0.6), entry("b", 0.6)]), 1e-9));
        assert!(!check_distribution(&dist(vec![entry("b", 0.5), entry("a", 0.5)]), 1e-9));
        assert!(check_distribution(&dist(vec![entry("a", 0.5), entry("b", 0.5)]), 1e-9));
        assert!(!check_distribution(&dist(vec![entry("a", 0.5), entry("a", 0.5)]), 1e-9));
        assert!(!check_distribution(&dist(vec![entry("a", 0.4), entry("b", 0.6)]), 1e-9));
    }

    #[test]
    fn last_decision_wins() {
        let d = |label: &str, decision, t| CurationDecision {
            object_id: "o1".into(),
            candidate_label: label.into(),
            decision,
            annotator: ANONYMOUS.into(),
            timestamp: Timestamp(t),
        };
        let log = vec![
            d("wood", Decision::Accept, 1),
            d("metal", Decision::Reject, 2),
            d("wood", Decision::Reject, 3),
        ];
        let eff = effective_decisions(&log);
        assert_eq!(eff.len(), 2);
        assert_eq!(eff[&("o1".into(), "wood".into())].decision, Decision::Reject);
    }

    #[test]
    fn decision_defaults_annotator() {
        let d: CurationDecision = serde_json::from_str(
            r#"{"object_id":"o","candidate_label":"wood","decision":"accept","timestamp":"2024-01-02T03:04:05Z"}"#,
        )
        .unwrap();
        assert_eq!(d.annotator, ANONYMOUS);
        assert_eq!(d.timestamp.to_string(), "2024-01-02T03:04:05Z");
    }
}
