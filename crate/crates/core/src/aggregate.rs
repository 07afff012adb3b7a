//! Score-based multi-probe aggregation.
//!
//! Three steps turn a set of probe records for one object into a distribution:
//!
//! 1. Inside each query, responses with the same canonical form collapse to
//!    the highest score among them (sampler duplicates must not add up).
//! 2. Across queries, a canonical response's per-query scores are combined
//!    with log-sum-exp, so recurrence over views or phrasings reinforces it.
//!    A query where the response never appears contributes `exp(-inf) = 0`.
//!    The `max` mode replaces the log-sum-exp with a plain maximum.
//! 3. A softmax over the combined scores gives the distribution.
//!
//! A query is one [`ProbeRecord`], i.e. one (view, question) pair.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::canon::{canonicalize, CanonError, CanonRuleset};
use crate::model::{AggregateDistribution, DistributionEntry, Mode, ProbeRecord, Provenance};
use crate::numeric::{log_sum_exp, softmax};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AggregateError {
    #[error("no canonical response survived aggregation")]
    EmptyAggregation,
    #[error("no probe records left after filtering")]
    NoRecordsAfterFilter,
    #[error("records span several objects: {0:?}")]
    MixedObjects(Vec<String>),
    #[error("records come from several backends: {0:?}")]
    MixedBackends(Vec<String>),
    #[error("aggregate score for {0:?} is not finite")]
    NonFiniteScore(String),
    #[error("threshold must be finite")]
    NonFiniteThreshold,
    #[error(transparent)]
    Canon(#[from] CanonError),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QueryKey {
    pub view_id: Option<u32>,
    pub question_id: String,
}

/// Per-query supremum score of every canonical response seen in that query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryScoreMap {
    pub key: QueryKey,
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggMode {
    #[default]
    Lse,
    Max,
}

impl FromStr for AggMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lse" => Ok(AggMode::Lse),
            "max" => Ok(AggMode::Max),
            other => Err(alloc::format!("unknown aggregation mode {other:?} (expected lse or max)")),
        }
    }
}

impl fmt::Display for AggMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggMode::Lse => "lse",
            AggMode::Max => "max",
        })
    }
}

/// Selects a subset of probe records. `None` means "all".
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProbeFilter {
    views: Option<BTreeSet<u32>>,
    questions: Option<BTreeSet<String>>,
    mode: Option<Mode>,
}

impl ProbeFilter {
    pub fn all() -> Self {
        Self::default()
    }

    /// Fails on empty sets; use `None` to select everything.
    pub fn new(
        views: Option<BTreeSet<u32>>,
        questions: Option<BTreeSet<String>>,
        mode: Option<Mode>,
    ) -> Result<Self, String> {
        if views.as_ref().is_some_and(BTreeSet::is_empty) {
            return Err("empty view set (omit the field to select all views)".into());
        }
        if questions.as_ref().is_some_and(BTreeSet::is_empty) {
            return Err("empty question set (omit the field to select all questions)".into());
        }
        Ok(ProbeFilter { views, questions, mode })
    }

    pub fn views(&self) -> Option<&BTreeSet<u32>> {
        self.views.as_ref()
    }

    pub fn questions(&self) -> Option<&BTreeSet<String>> {
        self.questions.as_ref()
    }

    pub fn mode(&self) -> Option<Mode> {
        self.mode
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = Some(mode);
        self
    }

    pub fn with_questions(mut self, questions: impl IntoIterator<Item = String>) -> Self {
        let set: BTreeSet<String> = questions.into_iter().collect();
        self.questions = if set.is_empty() { None } else { Some(set) };
        self
    }

    pub fn matches(&self, record: &ProbeRecord) -> bool {
        if self.mode.is_some_and(|m| m != record.mode) {
            return false;
        }
        if let Some(views) = &self.views {
            // LLM-mode records have no view and never pass a view filter.
            match record.view_id {
                Some(v) if views.contains(&v) => {}
                _ => return false,
            }
        }
        if let Some(qs) = &self.questions {
            if !qs.contains(&record.question_id) {
                return false;
            }
        }
        true
    }
}

/// Parses `views=0,1,2;questions=q1,q2;mode=vlm`. Every clause is optional;
/// an empty string or `all` selects everything.
impl FromStr for ProbeFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() || s == "all" {
            return Ok(ProbeFilter::all());
        }
        let (mut views, mut questions, mut mode) = (None, None, None);
        for clause in s.split(';').map(str::trim).filter(|c| !c.is_empty()) {
            let (key, value) = clause
                .split_once('=')
                .ok_or_else(|| alloc::format!("filter clause {clause:?} is not key=value"))?;
            let items = || value.split(',').map(str::trim).filter(|v| !v.is_empty());
            match key.trim() {
                "views" => {
                    let set = items()
                        .map(|v| v.parse::<u32>().map_err(|_| alloc::format!("bad view id {v:?}")))
                        .collect::<Result<BTreeSet<_>, _>>()?;
                    views = Some(set);
                }
                "questions" => questions = Some(items().map(ToString::to_string).collect()),
                "mode" => mode = Some(value.parse::<Mode>()?),
                other => return Err(alloc::format!("unknown filter key {other:?}")),
            }
        }
        ProbeFilter::new(views, questions, mode)
    }
}

impl fmt::Display for ProbeFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<String> = Vec::new();
        if let Some(v) = &self.views {
            let ids: Vec<String> = v.iter().map(ToString::to_string).collect();
            parts.push(alloc::format!("views={}", ids.join(",")));
        }
        if let Some(q) = &self.questions {
            let ids: Vec<&str> = q.iter().map(String::as_str).collect();
            parts.push(alloc::format!("questions={}", ids.join(",")));
        }
        if let Some(m) = self.mode {
            parts.push(alloc::format!("mode={m}"));
        }
        if parts.is_empty() {
            f.write_str("all")
        } else {
            f.write_str(&parts.join(";"))
        }
    }
}

/// Every raw response that mapped to a canonical form, keyed by that form.
pub type ProvenanceIndex = BTreeMap<String, Vec<Provenance>>;

fn query_key(record: &ProbeRecord) -> QueryKey {
    QueryKey { view_id: record.view_id, question_id: record.question_id.clone() }
}

/// Collapses equivalent responses of one query to their highest score.
///
/// Responses whose canonical form is empty are dropped.
pub fn dedupe_rescore(
    record: &ProbeRecord,
    ruleset: &CanonRuleset,
) -> Result<QueryScoreMap, CanonError> {
    let mut scores: BTreeMap<String, f64> = BTreeMap::new();
    for response in &record.responses {
        let canonical = canonicalize(&response.text, ruleset)?;
        if canonical.is_empty() {
            continue;
        }
        scores
            .entry(canonical)
            .and_modify(|s| *s = s.max(response.score))
            .or_insert(response.score);
    }
    Ok(QueryScoreMap { key: query_key(record), scores })
}

/// Combines per-query scores into one aggregate score per canonical response.
pub fn combine_queries(
    maps: &[QueryScoreMap],
    mode: AggMode,
) -> Result<BTreeMap<String, f64>, AggregateError> {
    let mut per_canonical: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for map in maps {
        for (canonical, &score) in &map.scores {
            per_canonical.entry(canonical.as_str()).or_default().push(score);
        }
    }
    if per_canonical.is_empty() {
        return Err(AggregateError::EmptyAggregation);
    }
    Ok(per_canonical
        .into_iter()
        .map(|(canonical, mut scores)| {
            // Fixed summation order keeps the result independent of record order.
            scores.sort_by(|a, b| b.total_cmp(a));
            let agg = match mode {
                AggMode::Lse => log_sum_exp(&scores),
                AggMode::Max => scores[0],
            };
            (canonical.to_string(), agg)
        })
        .collect())
}

/// Softmax over aggregate scores, with entries sorted and provenance attached.
pub fn to_distribution(
    agg_scores: &BTreeMap<String, f64>,
    object_id: &str,
    property: &str,
    provenance: &ProvenanceIndex,
) -> Result<AggregateDistribution, AggregateError> {
    if agg_scores.is_empty() {
        return Err(AggregateError::EmptyAggregation);
    }
    if let Some((c, _)) = agg_scores.iter().find(|(_, s)| !s.is_finite()) {
        return Err(AggregateError::NonFiniteScore(c.clone()));
    }
    let scores: Vec<f64> = agg_scores.values().copied().collect();
    let probs = softmax(&scores);
    let mut entries: Vec<DistributionEntry> = agg_scores
        .iter()
        .zip(probs)
        .map(|((canonical, &agg_score), prob)| DistributionEntry {
            canonical: canonical.clone(),
            agg_score,
            prob,
            provenance: provenance.get(canonical).cloned().unwrap_or_default(),
        })
        .collect();
    entries.sort_by(crate::model::entry_order);
    Ok(AggregateDistribution {
        object_id: object_id.to_string(),
        property: property.to_string(),
        entries,
    })
}

fn provenance_order(a: &Provenance, b: &Provenance) -> core::cmp::Ordering {
    a.view_id
        .cmp(&b.view_id)
        .then_with(|| a.question_id.cmp(&b.question_id))
        .then_with(|| b.score.total_cmp(&a.score))
        .then_with(|| a.raw_text.cmp(&b.raw_text))
}

/// End-to-end aggregation of one object's probe records.
///
/// Records must all describe the same object and come from the same backend
/// (when they name one); the filter selects which queries take part.
pub fn aggregate(
    records: &[ProbeRecord],
    filter: &ProbeFilter,
    ruleset: &CanonRuleset,
    mode: AggMode,
    property: &str,
) -> Result<AggregateDistribution, AggregateError> {
    let objects: BTreeSet<&str> = records.iter().map(|r| r.object_id.as_str()).collect();
    if objects.len() > 1 {
        return Err(AggregateError::MixedObjects(objects.into_iter().map(String::from).collect()));
    }
    let selected: Vec<&ProbeRecord> = records.iter().filter(|r| filter.matches(r)).collect();
    let Some(first) = selected.first() else {
        return Err(AggregateError::NoRecordsAfterFilter);
    };
    let backends: BTreeSet<&str> = selected.iter().filter_map(|r| r.backend_id.as_deref()).collect();
    if backends.len() > 1 {
        return Err(AggregateError::MixedBackends(backends.into_iter().map(String::from).collect()));
    }

    let mut maps = Vec::with_capacity(selected.len());
    let mut provenance = ProvenanceIndex::new();
    for record in &selected {
        for response in &record.responses {
            let canonical = canonicalize(&response.text, ruleset)?;
            if canonical.is_empty() {
                continue;
            }
            provenance.entry(canonical).or_default().push(Provenance {
                view_id: record.view_id,
                question_id: record.question_id.clone(),
                raw_text: response.text.clone(),
                score: response.score,
            });
        }
        maps.push(dedupe_rescore(record, ruleset)?);
    }
    for items in provenance.values_mut() {
        items.sort_by(provenance_order);
    }
    let agg = combine_queries(&maps, mode)?;
    to_distribution(&agg, &first.object_id, property, &provenance)
}

/// Display view of a distribution with low-scoring entries hidden.
///
/// Probabilities are left as they were (not renormalized), so the entries of
/// a capped view no longer sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CappedDistribution {
    pub object_id: String,
    pub property: String,
    pub threshold: f64,
    pub display_only: bool,
    pub entries: Vec<DistributionEntry>,
}

/// Removes entries whose aggregate score is below `threshold`.
pub fn support_cap(
    dist: &AggregateDistribution,
    threshold: f64,
) -> Result<CappedDistribution, AggregateError> {
    if !threshold.is_finite() {
        return Err(AggregateError::NonFiniteThreshold);
    }
    Ok(CappedDistribution {
        object_id: dist.object_id.clone(),
        property: dist.property.clone(),
        threshold,
        display_only: true,
        entries: dist
            .entries
            .iter()
            .filter(|e| e.agg_score >= threshold)
            .cloned()
            .collect(),
    })
}
