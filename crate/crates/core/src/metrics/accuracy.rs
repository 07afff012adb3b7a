//! Label matching and accuracy over aggregate distributions.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::num::NonZeroUsize;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::canon::{canonicalize, CanonError, CanonRuleset, Rule};
use crate::model::{AggregateDistribution, DistributionEntry, LabelRecord};
use crate::numeric::mean_std;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    /// Both sides canonicalized, then compared for equality.
    CanonicalEqual,
    /// Canonicalized label occurs inside the canonicalized response.
    Substring,
    /// Raw string equality, no rulesets.
    Exact,
}

impl MatchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchKind::CanonicalEqual => "canonical_equal",
            MatchKind::Substring => "substring",
            MatchKind::Exact => "exact",
        }
    }
}

/// Label ruleset for LVIS-style category names: underscores become spaces, lowercased.
pub fn lvis_label_ruleset() -> CanonRuleset {
    CanonRuleset::new(
        "lvis-label",
        alloc::vec![
            Rule::Replace(alloc::vec![("_".to_string(), " ".to_string())]),
            Rule::Lowercase,
            Rule::TrimWhitespace,
            Rule::CollapseInternalWhitespace,
        ],
    )
}

fn lowercase_trim() -> CanonRuleset {
    CanonRuleset::new("lowercase", alloc::vec![Rule::Lowercase, Rule::TrimWhitespace])
}

fn named_ruleset(name: &str) -> Result<CanonRuleset, CanonError> {
    match name {
        "lvis-label" => Ok(lvis_label_ruleset()),
        "lowercase" => Ok(lowercase_trim()),
        other => CanonRuleset::builtin(other),
    }
}

/// Decides whether a distribution entry counts as the ground-truth label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matcher {
    pub kind: MatchKind,
    pub label_ruleset: CanonRuleset,
    pub response_ruleset: CanonRuleset,
}

impl Matcher {
    pub fn new(kind: MatchKind, label_ruleset: CanonRuleset, response_ruleset: CanonRuleset) -> Self {
        Matcher { kind, label_ruleset, response_ruleset }
    }

    pub fn exact() -> Self {
        Matcher::new(MatchKind::Exact, CanonRuleset::identity(), CanonRuleset::identity())
    }

    /// Type evaluation against LVIS categories.
    pub fn lvis() -> Self {
        Matcher::new(MatchKind::CanonicalEqual, lvis_label_ruleset(), lowercase_trim())
    }

    /// Material evaluation: "oak wood" credits the label "wood".
    pub fn material() -> Self {
        Matcher::new(MatchKind::Substring, lowercase_trim(), lowercase_trim())
    }

    /// Name used in reports, e.g. `substring:lowercase:lowercase`.
    pub fn describe(&self) -> String {
        alloc::format!(
            "{}:{}:{}",
            self.kind.as_str(),
            self.label_ruleset.name,
            self.response_ruleset.name
        )
    }

    /// Canonical label, computed once per evaluation.
    pub fn prepare_label(&self, label: &str) -> Result<String, CanonError> {
        match self.kind {
            MatchKind::Exact => Ok(label.to_string()),
            _ => canonicalize(label, &self.label_ruleset),
        }
    }

    /// Matches a response against a label already passed through [`Matcher::prepare_label`].
    pub fn matches_prepared(&self, response: &str, prepared_label: &str) -> Result<bool, CanonError> {
        Ok(match self.kind {
            MatchKind::Exact => response == prepared_label,
            MatchKind::CanonicalEqual => {
                !prepared_label.is_empty()
                    && canonicalize(response, &self.response_ruleset)? == prepared_label
            }
            MatchKind::Substring => {
                !prepared_label.is_empty()
                    && canonicalize(response, &self.response_ruleset)?.contains(prepared_label)
            }
        })
    }

    pub fn matches(&self, response: &str, label: &str) -> Result<bool, CanonError> {
        let prepared = self.prepare_label(label)?;
        self.matches_prepared(response, &prepared)
    }
}

/// `kind[:label_ruleset[:response_ruleset]]`, or one of the presets
/// `lvis`, `material`, `exact`.
impl FromStr for Matcher {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lvis" => return Ok(Matcher::lvis()),
            "material" => return Ok(Matcher::material()),
            "exact" => return Ok(Matcher::exact()),
            _ => {}
        }
        let mut parts = s.split(':');
        let kind = match parts.next().unwrap_or("") {
            "canonical_equal" => MatchKind::CanonicalEqual,
            "substring" => MatchKind::Substring,
            other => return Err(alloc::format!("unknown matcher kind {other:?}")),
        };
        let label = parts.next().map_or(Ok(lowercase_trim()), named_ruleset);
        let response = parts.next().map_or(Ok(lowercase_trim()), named_ruleset);
        if parts.next().is_some() {
            return Err(alloc::format!("matcher spec {s:?} has too many parts"));
        }
        Ok(Matcher::new(
            kind,
            label.map_err(|e| e.to_string())?,
            response.map_err(|e| e.to_string())?,
        ))
    }
}

impl fmt::Display for Matcher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

/// How many leading entries a top-k check scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopK {
    Finite(NonZeroUsize),
    Infinite,
}

impl TopK {
    pub fn new(k: usize) -> Option<Self> {
        NonZeroUsize::new(k).map(TopK::Finite)
    }

    fn limit(self) -> usize {
        match self {
            TopK::Finite(k) => k.get(),
            TopK::Infinite => usize::MAX,
        }
    }
}

impl FromStr for TopK {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inf" | "infinity" | "∞" => Ok(TopK::Infinite),
            n => n
                .parse::<usize>()
                .ok()
                .and_then(TopK::new)
                .ok_or_else(|| alloc::format!("k must be a positive integer or inf, got {n:?}")),
        }
    }
}

impl fmt::Display for TopK {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopK::Finite(k) => write!(f, "{k}"),
            TopK::Infinite => f.write_str("inf"),
        }
    }
}

fn matching<'a>(
    dist: &'a AggregateDistribution,
    label: &str,
    matcher: &Matcher,
) -> Result<Vec<(usize, &'a DistributionEntry)>, CanonError> {
    let prepared = matcher.prepare_label(label)?;
    let mut out = Vec::new();
    for (i, e) in dist.entries.iter().enumerate() {
        if matcher.matches_prepared(&e.canonical, &prepared)? {
            out.push((i, e));
        }
    }
    Ok(out)
}

/// True iff one of the first `k` entries matches `label`.
pub fn top_k_hit(
    dist: &AggregateDistribution,
    label: &str,
    k: TopK,
    matcher: &Matcher,
) -> Result<bool, CanonError> {
    let prepared = matcher.prepare_label(label)?;
    for e in dist.entries.iter().take(k.limit()) {
        if matcher.matches_prepared(&e.canonical, &prepared)? {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Whether soft accuracy adds every matching entry or keeps only the best one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftRule {
    #[default]
    Sum,
    BestOnly,
}

/// Probability mass on entries matching `label`, summed over all matches.
pub fn soft_accuracy(
    dist: &AggregateDistribution,
    label: &str,
    matcher: &Matcher,
) -> Result<f64, CanonError> {
    soft_accuracy_with(dist, label, matcher, SoftRule::Sum)
}

pub fn soft_accuracy_with(
    dist: &AggregateDistribution,
    label: &str,
    matcher: &Matcher,
    rule: SoftRule,
) -> Result<f64, CanonError> {
    let hits = matching(dist, label, matcher)?;
    let mass = match rule {
        SoftRule::Sum => crate::numeric::neumaier_sum(hits.iter().map(|(_, e)| e.prob)),
        SoftRule::BestOnly => hits.iter().map(|(_, e)| e.prob).fold(0.0, f64::max),
    };
    Ok(mass.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TagError {
    #[error("tag list is empty after canonicalization")]
    EmptyTagList,
    #[error(transparent)]
    Canon(#[from] CanonError),
}

/// Uniform distribution over distinct canonical tags, ranked in input order.
///
/// Each entry's `agg_score` is its negated rank (0, -1, -2, ...) so the
/// distribution order reproduces the tag order despite equal probabilities.
pub fn tags_to_distribution(
    object_id: &str,
    property: &str,
    tags: &[String],
    ruleset: &CanonRuleset,
) -> Result<AggregateDistribution, TagError> {
    let mut seen = alloc::collections::BTreeSet::new();
    let mut distinct = Vec::new();
    for tag in tags {
        let c = canonicalize(tag, ruleset)?;
        if !c.is_empty() && seen.insert(c.clone()) {
            distinct.push(c);
        }
    }
    if distinct.is_empty() {
        return Err(TagError::EmptyTagList);
    }
    let p = 1.0 / distinct.len() as f64;
    Ok(AggregateDistribution {
        object_id: object_id.to_string(),
        property: property.to_string(),
        entries: distinct
            .into_iter()
            .enumerate()
            .map(|(rank, canonical)| DistributionEntry {
                canonical,
                agg_score: -(rank as f64),
                prob: p,
                provenance: Vec::new(),
            })
            .collect(),
    })
}

/// Mean and population standard deviation of one evaluation field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        mean_std(values).map(|(mean, std)| MeanStd { mean, std })
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectEval {
    pub object_id: String,
    pub label: String,
    pub prediction: String,
    pub top1: bool,
    pub top_k: bool,
    pub top_inf: bool,
    pub soft: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n: usize,
    pub k: usize,
    pub matcher: String,
    pub std_convention: String,
    pub top1: MeanStd,
    pub top_k: MeanStd,
    pub top_inf: MeanStd,
    pub soft: MeanStd,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<MeanStd>,
}

/// Per-object results plus their summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub per_object: BTreeMap<String, ObjectEval>,
    pub summary: EvalSummary,
}

fn bool_values(items: &[&ObjectEval], f: impl Fn(&ObjectEval) -> bool) -> Vec<f64> {
    items.iter().map(|o| if f(o) { 1.0 } else { 0.0 }).collect()
}

/// Recomputes the summary from per-object rows. `None` when there are no rows.
pub fn summarize(
    per_object: &BTreeMap<String, ObjectEval>,
    k: usize,
    matcher: &Matcher,
) -> Option<EvalSummary> {
    let rows: Vec<&ObjectEval> = per_object.values().collect();
    let sims: Vec<f64> = rows.iter().filter_map(|o| o.similarity).collect();
    Some(EvalSummary {
        n: rows.len(),
        k,
        matcher: matcher.describe(),
        std_convention: "population".to_string(),
        top1: MeanStd::of(&bool_values(&rows, |o| o.top1))?,
        top_k: MeanStd::of(&bool_values(&rows, |o| o.top_k))?,
        top_inf: MeanStd::of(&bool_values(&rows, |o| o.top_inf))?,
        soft: MeanStd::of(&rows.iter().map(|o| o.soft).collect::<Vec<_>>())?,
        similarity: if sims.len() == rows.len() { MeanStd::of(&sims) } else { None },
    })
}

/// Accuracy fields for one labelled object. Similarity is filled in by callers
/// that have an embedder.
pub fn evaluate_object(
    dist: &AggregateDistribution,
    label: &LabelRecord,
    k: TopK,
    matcher: &Matcher,
) -> Result<ObjectEval, CanonError> {
    Ok(ObjectEval {
        object_id: dist.object_id.clone(),
        label: label.label.clone(),
        prediction: dist.mode().unwrap_or("").to_string(),
        top1: top_k_hit(dist, &label.label, TopK::new(1).expect("1 is non-zero"), matcher)?,
        top_k: top_k_hit(dist, &label.label, k, matcher)?,
        top_inf: top_k_hit(dist, &label.label, TopK::Infinite, matcher)?,
        soft: soft_accuracy(dist, &label.label, matcher)?,
        similarity: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn dist(entries: &[(&str, f64)]) -> AggregateDistribution {
        let mut d = AggregateDistribution {
            object_id: "o".into(),
            property: "type".into(),
            entries: entries
                .iter()
                .map(|(c, p)| DistributionEntry {
                    canonical: c.to_string(),
                    agg_score: libm::log(*p),
                    prob: *p,
                    provenance: vec![],
                })
                .collect(),
        };
        d.sort_entries();
        d
    }

    fn k(n: usize) -> TopK {
        TopK::new(n).unwrap()
    }

    #[test]
    fn top_k_examples() {
        let m = Matcher::exact();
        assert!(top_k_hit(&dist(&[("cat", 1.0)]), "cat", k(1), &m).unwrap());
        let d = dist(&[("cat", 0.6), ("dog", 0.4)]);
        assert!(!top_k_hit(&d, "dog", k(1), &m).unwrap());
        assert!(top_k_hit(&d, "dog", k(2), &m).unwrap());
        assert!(!top_k_hit(&d, "fish", TopK::Infinite, &m).unwrap());
    }

    #[test]
    fn soft_examples() {
        let m = Matcher::exact();
        assert_eq!(soft_accuracy(&dist(&[("cat", 1.0)]), "cat", &m).unwrap(), 1.0);
        assert_eq!(soft_accuracy(&dist(&[("cat", 0.6), ("dog", 0.4)]), "dog", &m).unwrap(), 0.4);
        let d = dist(&[("oak wood", 0.3), ("wood", 0.3), ("metal", 0.4)]);
        let sum = soft_accuracy(&d, "wood", &Matcher::material()).unwrap();
        assert!((sum - 0.6).abs() < 1e-15);
        let best = soft_accuracy_with(&d, "wood", &Matcher::material(), SoftRule::BestOnly).unwrap();
        assert_eq!(best, 0.3);
    }

    #[test]
    fn lvis_labels_are_normalized() {
        let d = dist(&[("teddy bear", 0.7), ("toy", 0.3)]);
        assert!(top_k_hit(&d, "Teddy_Bear", k(1), &Matcher::lvis()).unwrap());
        assert!(!top_k_hit(&d, "Teddy_Bear", k(1), &Matcher::exact()).unwrap());
    }

    #[test]
    fn matcher_specs() {
        assert_eq!("material".parse::<Matcher>().unwrap(), Matcher::material());
        let m: Matcher = "canonical_equal:lvis-label:vqa-first-term".parse().unwrap();
        assert_eq!(m.kind, MatchKind::CanonicalEqual);
        assert_eq!(m.response_ruleset.name, "vqa-first-term");
        assert!("fuzzy".parse::<Matcher>().is_err());
        assert!("substring:nope".parse::<Matcher>().is_err());
        assert_eq!(Matcher::material().to_string(), "substring:lowercase:lowercase");
    }

    #[test]
    fn tags() {
        let rs = CanonRuleset::builtin("vqa-first-term").unwrap();
        let d = tags_to_distribution("o", "type", &["sword".into()], &rs).unwrap();
        assert_eq!(d.entries[0].prob, 1.0);

        let d = tags_to_distribution("o", "type", &["sword".into(), "weapon".into()], &rs).unwrap();
        assert_eq!(d.mode(), Some("sword"));
        assert_eq!(d.prob_of("weapon"), 0.5);

        let d = tags_to_distribution("o", "type", &["Sword".into(), "sword".into(), "shield".into()], &rs)
            .unwrap();
        assert_eq!(d.entries.len(), 2);
        assert!(d.entries.iter().all(|e| e.prob == 0.5));

        // rank order survives even when it is not alphabetical
        let d = tags_to_distribution("o", "type", &["weapon".into(), "sword".into()], &rs).unwrap();
        assert_eq!(d.mode(), Some("weapon"));
        assert!(crate::model::check_distribution(&d, 1e-12));
        assert!(top_k_hit(&d, "weapon", k(1), &Matcher::exact()).unwrap());

        assert_eq!(
            tags_to_distribution("o", "type", &[" , ".into()], &rs),
            Err(TagError::EmptyTagList)
        );
    }

    #[test]
    fn summary_of_hit_and_miss() {
        let m = Matcher::exact();
        let label = |o: &str, l: &str| LabelRecord {
            object_id: o.into(),
            property: "type".into(),
            label: l.into(),
            source: "test".into(),
        };
        let mut a = dist(&[("cat", 0.6), ("dog", 0.4)]);
        a.object_id = "a".into();
        let mut b = a.clone();
        b.object_id = "b".into();
        let mut rows = BTreeMap::new();
        rows.insert("a".into(), evaluate_object(&a, &label("a", "cat"), k(5), &m).unwrap());
        rows.insert("b".into(), evaluate_object(&b, &label("b", "dog"), k(5), &m).unwrap());
        let s = summarize(&rows, 5, &m).unwrap();
        assert_eq!(s.top1, MeanStd { mean: 0.5, std: 0.5 });
        assert_eq!(s.top_k, MeanStd { mean: 1.0, std: 0.0 });
        assert_eq!(s.top1.to_string(), "0.50 ± 0.50");
        assert!(summarize(&BTreeMap::new(), 5, &m).is_none());
    }
}
