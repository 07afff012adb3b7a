//! Label sets, label merging and the accept/reject curation workflow.
//!
//! Decisions are an append-only log. Every status and every exported label
//! set is derived by replaying it; nothing is edited in place.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{effective_decisions, AggregateDistribution, CurationDecision, Decision, LabelRecord};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LabelError {
    #[error("label merges form a cycle through {0:?}")]
    CyclicMerge(String),
    #[error("label {from:?} merges into {to:?}, which is itself merged (merges must be single-level)")]
    MultiLevelMerge { from: String, to: String },
    #[error("empty label in merge map")]
    EmptyMergeLabel,
    #[error("duplicate label record for object {object_id:?}, property {property:?}, source {source_name:?}")]
    DuplicateLabelRecord { object_id: String, property: String, source_name: String },
    #[error("empty label for object {0:?}")]
    EmptyLabel(String),
}

/// Single-level rewrite map for near-duplicate labels (e.g. "metallic" → "metal").
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, String>", into = "BTreeMap<String, String>")]
pub struct MergeMap(BTreeMap<String, String>);

impl MergeMap {
    pub fn new(map: BTreeMap<String, String>) -> Result<Self, LabelError> {
        let map: BTreeMap<String, String> = map.into_iter().filter(|(k, v)| k != v).collect();
        for (from, to) in &map {
            if from.is_empty() || to.is_empty() {
                return Err(LabelError::EmptyMergeLabel);
            }
            if let Some(next) = map.get(to) {
                if next == from {
                    return Err(LabelError::CyclicMerge(from.clone()));
                }
                // Follow the chain to tell a cycle from plain multi-level nesting.
                let mut seen = BTreeSet::from([from.as_str(), to.as_str()]);
                let mut cur = next;
                while let Some(n) = map.get(cur) {
                    if !seen.insert(cur.as_str()) {
                        return Err(LabelError::CyclicMerge(from.clone()));
                    }
                    cur = n;
                }
                return Err(LabelError::MultiLevelMerge { from: from.clone(), to: to.clone() });
            }
        }
        Ok(MergeMap(map))
    }

    pub fn empty() -> Self {
        MergeMap::default()
    }

    pub fn apply<'a>(&'a self, label: &'a str) -> &'a str {
        self.0.get(label).map_or(label, String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<BTreeMap<String, String>> for MergeMap {
    type Error = LabelError;

    fn try_from(map: BTreeMap<String, String>) -> Result<Self, Self::Error> {
        MergeMap::new(map)
    }
}

impl From<MergeMap> for BTreeMap<String, String> {
    fn from(m: MergeMap) -> Self {
        m.0
    }
}

/// A validated label collection with its class histogram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    pub records: Vec<LabelRecord>,
    pub histogram: BTreeMap<String, usize>,
}

impl LabelSet {
    /// Rewrites labels through `merges`, then checks (object, property, source) uniqueness.
    pub fn build(records: Vec<LabelRecord>, merges: &MergeMap) -> Result<Self, LabelError> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(records.len());
        let mut histogram = BTreeMap::new();
        for mut r in records {
            if r.label.trim().is_empty() {
                return Err(LabelError::EmptyLabel(r.object_id));
            }
            r.label = merges.apply(&r.label).to_string();
            if !seen.insert((r.object_id.clone(), r.property.clone(), r.source.clone())) {
                return Err(LabelError::DuplicateLabelRecord {
                    object_id: r.object_id,
                    property: r.property,
                    source_name: r.source,
                });
            }
            *histogram.entry(r.label.clone()).or_insert(0) += 1;
            out.push(r);
        }
        Ok(LabelSet { records: out, histogram })
    }

    /// Label for `object_id` and `property`, if any source provides one.
    pub fn label_for(&self, object_id: &str, property: &str) -> Option<&LabelRecord> {
        self.records
            .iter()
            .find(|r| r.object_id == object_id && r.property == property)
    }
}

/// Property curated candidates describe unless they say otherwise.
pub const DEFAULT_CURATION_PROPERTY: &str = "material";
/// Source name written on exported labels.
pub const CURATION_SOURCE: &str = "material-test-set";

fn default_property() -> String {
    DEFAULT_CURATION_PROPERTY.to_string()
}

/// An (object, label) pair awaiting a human verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationCandidate {
    pub object_id: String,
    pub candidate_label: String,
    #[serde(default = "default_property")]
    pub property: String,
    #[serde(default)]
    pub view_refs: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueueStatus {
    Pending,
    Accepted,
    Rejected,
}

impl FromStr for QueueStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pending" => Ok(QueueStatus::Pending),
            "accepted" => Ok(QueueStatus::Accepted),
            "rejected" => Ok(QueueStatus::Rejected),
            other => Err(alloc::format!(
                "invalid status {other:?} (expected pending, accepted or rejected)"
            )),
        }
    }
}

impl fmt::Display for QueueStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueueStatus::Pending => "pending",
            QueueStatus::Accepted => "accepted",
            QueueStatus::Rejected => "rejected",
        })
    }
}

impl From<Decision> for QueueStatus {
    fn from(d: Decision) -> Self {
        match d {
            Decision::Accept => QueueStatus::Accepted,
            Decision::Reject => QueueStatus::Rejected,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationQueueItem {
    pub object_id: String,
    pub candidate_label: String,
    pub property: String,
    pub view_refs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<AggregateDistribution>,
    pub status: QueueStatus,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub pending: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub total: usize,
}

/// Candidates with their log-derived status, ordered by (object_id, label).
#[derive(Debug, Clone)]
pub struct CurationState {
    candidates: Vec<CurationCandidate>,
    index: BTreeMap<(String, String), usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CurationError {
    #[error("duplicate candidate ({0:?}, {1:?})")]
    DuplicateCandidate(String, String),
    #[error("unknown candidate pair ({0:?}, {1:?})")]
    UnknownPair(String, String),
    #[error(transparent)]
    Labels(#[from] LabelError),
}

impl CurationState {
    pub fn new(mut candidates: Vec<CurationCandidate>) -> Result<Self, CurationError> {
        candidates.sort_by(|a, b| {
            (a.object_id.as_str(), a.candidate_label.as_str())
                .cmp(&(b.object_id.as_str(), b.candidate_label.as_str()))
        });
        let mut index = BTreeMap::new();
        for (i, c) in candidates.iter().enumerate() {
            let key = (c.object_id.clone(), c.candidate_label.clone());
            if index.insert(key, i).is_some() {
                return Err(CurationError::DuplicateCandidate(c.object_id.clone(), c.candidate_label.clone()));
            }
        }
        Ok(CurationState { candidates, index })
    }

    pub fn candidates(&self) -> &[CurationCandidate] {
        &self.candidates
    }

    pub fn get(&self, object_id: &str, label: &str) -> Option<&CurationCandidate> {
        self.index
            .get(&(object_id.to_string(), label.to_string()))
            .map(|&i| &self.candidates[i])
    }

    pub fn for_object<'a>(&'a self, object_id: &'a str) -> impl Iterator<Item = &'a CurationCandidate> + 'a {
        self.candidates.iter().filter(move |c| c.object_id == object_id)
    }

    /// Status of every candidate after replaying `log`. Decisions about
    /// unknown pairs are ignored.
    pub fn statuses(&self, log: &[CurationDecision]) -> Vec<QueueStatus> {
        let effective = effective_decisions(log);
        self.candidates
            .iter()
            .map(|c| {
                effective
                    .get(&(c.object_id.clone(), c.candidate_label.clone()))
                    .map_or(QueueStatus::Pending, |d| d.decision.into())
            })
            .collect()
    }

    pub fn counts(&self, log: &[CurationDecision]) -> StatusCounts {
        let mut counts = StatusCounts { total: self.candidates.len(), ..StatusCounts::default() };
        for s in self.statuses(log) {
            match s {
                QueueStatus::Pending => counts.pending += 1,
                QueueStatus::Accepted => counts.accepted += 1,
                QueueStatus::Rejected => counts.rejected += 1,
            }
        }
        counts
    }

    /// Up to `limit` candidates with `status`, in (object_id, label) order.
    pub fn queue(
        &self,
        log: &[CurationDecision],
        status: QueueStatus,
        limit: usize,
    ) -> Vec<(&CurationCandidate, QueueStatus)> {
        self.candidates
            .iter()
            .zip(self.statuses(log))
            .filter(|(_, s)| *s == status)
            .take(limit)
            .collect()
    }

    /// Whether appending `decision` would change anything. Errors on unknown pairs.
    ///
    /// Returns the existing effective decision when it already says the same thing.
    pub fn existing_equivalent<'a>(
        &self,
        log: &'a [CurationDecision],
        object_id: &str,
        label: &str,
        decision: Decision,
    ) -> Result<Option<&'a CurationDecision>, CurationError> {
        if self.get(object_id, label).is_none() {
            return Err(CurationError::UnknownPair(object_id.to_string(), label.to_string()));
        }
        Ok(log
            .iter()
            .rev()
            .find(|d| d.object_id == object_id && d.candidate_label == label)
            .filter(|d| d.decision == decision))
    }

    /// One label record per accepted pair, rewritten through `merges`.
    pub fn export(&self, log: &[CurationDecision], merges: &MergeMap) -> Result<LabelSet, CurationError> {
        let records = self
            .candidates
            .iter()
            .zip(self.statuses(log))
            .filter(|(_, s)| *s == QueueStatus::Accepted)
            .map(|(c, _)| LabelRecord {
                object_id: c.object_id.clone(),
                property: c.property.clone(),
                label: c.candidate_label.clone(),
                source: CURATION_SOURCE.to_string(),
            })
            .collect();
        Ok(LabelSet::build(records, merges)?)
    }
}
