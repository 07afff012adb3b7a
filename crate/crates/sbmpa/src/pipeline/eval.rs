//! Accuracy of aggregate distributions against a label set.

use std::collections::{BTreeMap, BTreeSet};

use sbmpa_core::curation::LabelSet;
use sbmpa_core::metrics::{embedding_similarity, evaluate_object, summarize, EvalResult, EvalSummary, Matcher, TopK};
use sbmpa_core::{AggregateDistribution, LabelRecord};

use crate::config::Embedder;
use crate::error::{list_some, RunError};
use crate::store::Record;

impl Record for EvalSummary {
    const KIND: &'static str = "eval_summary";
}

pub struct EvalOptions<'a> {
    pub k: TopK,
    pub matcher: &'a Matcher,
    /// Only evaluate aggregates for this property.
    pub property: Option<&'a str>,
    /// Only use labels from this source.
    pub label_source: Option<&'a str>,
    /// When set, fills the similarity column.
    pub embedder: Option<&'a Embedder>,
}

fn finite_k(k: TopK) -> Result<usize, RunError> {
    match k {
        TopK::Finite(n) => Ok(n.get()),
        TopK::Infinite => Err(RunError::Config("k must be finite; top-∞ is always reported".into())),
    }
}

/// Evaluates every aggregate that has a label. Errors when none does.
pub fn evaluate(
    aggregates: &[AggregateDistribution],
    labels: &LabelSet,
    options: &EvalOptions<'_>,
) -> Result<EvalResult, RunError> {
    let k = finite_k(options.k)?;
    let selected: Vec<&AggregateDistribution> = aggregates
        .iter()
        .filter(|d| options.property.is_none_or(|p| d.property == p))
        .collect();
    let properties: BTreeSet<&str> = selected.iter().map(|d| d.property.as_str()).collect();
    if properties.len() > 1 {
        return Err(RunError::Config(format!(
            "aggregates cover several properties ({}); choose one with --property",
            properties.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    let mut by_key: BTreeMap<(&str, &str), Vec<&LabelRecord>> = BTreeMap::new();
    for r in &labels.records {
        if options.label_source.is_none_or(|s| r.source == s) {
            by_key.entry((r.object_id.as_str(), r.property.as_str())).or_default().push(r);
        }
    }
    let mut per_object = BTreeMap::new();
    for dist in selected {
        let Some(candidates) = by_key.get(&(dist.object_id.as_str(), dist.property.as_str())) else {
            continue;
        };
        if candidates.len() > 1 {
            let sources: Vec<String> = candidates.iter().map(|r| r.source.clone()).collect();
            return Err(RunError::Config(format!(
                "object {} has labels from several sources ({}); choose one with --label-source",
                dist.object_id,
                sources.join(", ")
            )));
        }
        let label = candidates[0];
        let mut row = evaluate_object(dist, label, options.k, options.matcher)
            .map_err(|e| RunError::Config(e.to_string()))?;
        if let Some(embedder) = options.embedder {
            let prepared = options.matcher.prepare_label(&label.label).map_err(|e| RunError::Config(e.to_string()))?;
            let sim = embedding_similarity(&row.prediction, &prepared, &&**embedder)
                .map_err(|e| RunError::Backend(format!("object {}: {e}", dist.object_id)))?;
            row.similarity = Some(sim);
        }
        if per_object.insert(dist.object_id.clone(), row).is_some() {
            return Err(RunError::Config(format!("duplicate aggregate for object {}", dist.object_id)));
        }
    }
    let Some(summary) = summarize(&per_object, k, options.matcher) else {
        let ids: Vec<String> = aggregates.iter().map(|d| d.object_id.clone()).collect();
        return Err(RunError::Empty(format!("no aggregate has a label (aggregates: {})", list_some(&ids, 10))));
    };
    Ok(EvalResult { per_object, summary })
}

/// Summary rows formatted as mean ± std to two decimals.
pub fn format_summary(s: &EvalSummary) -> String {
    let mut rows = vec![
        ("Top-1".to_string(), s.top1),
        (format!("Top-{}", s.k), s.top_k),
        ("Top-∞".to_string(), s.top_inf),
        ("Soft".to_string(), s.soft),
    ];
    if let Some(sim) = s.similarity {
        rows.push(("Similarity".to_string(), sim));
    }
    let mut out = format!("n = {}, matcher = {}, std = {}\n", s.n, s.matcher, s.std_convention);
    for (name, v) in rows {
        out.push_str(&format!("{name:<12}{v}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use sbmpa_core::curation::MergeMap;
    use sbmpa_core::DistributionEntry;

    fn dist(object: &str, entries: &[(&str, f64)]) -> AggregateDistribution {
        AggregateDistribution {
            object_id: object.into(),
            property: "type".into(),
            entries: entries
                .iter()
                .map(|(c, p)| DistributionEntry { canonical: c.to_string(), agg_score: p.ln(), prob: *p, provenance: vec![] })
                .collect(),
        }
    }

    fn labels(pairs: &[(&str, &str)]) -> LabelSet {
        let records = pairs
            .iter()
            .map(|(o, l)| LabelRecord { object_id: o.to_string(), property: "type".into(), label: l.to_string(), source: "lvis".into() })
            .collect();
        LabelSet::build(records, &MergeMap::empty()).unwrap()
    }

    #[test]
    fn one_hit_one_miss() {
        let m = Matcher::exact();
        let opts = EvalOptions { k: TopK::new(1).unwrap(), matcher: &m, property: None, label_source: None, embedder: None };
        let aggs = [dist("a", &[("cat", 0.6), ("dog", 0.4)]), dist("b", &[("cat", 1.0)])];
        let r = evaluate(&aggs, &labels(&[("a", "cat"), ("b", "dog")]), &opts).unwrap();
        assert_eq!((r.summary.top1.mean, r.summary.top1.std), (0.5, 0.5));
        assert!(format_summary(&r.summary).contains("Top-1       0.50 ± 0.50"));
    }

    #[test]
    fn no_overlap_is_empty_error() {
        let m = Matcher::exact();
        let opts = EvalOptions { k: TopK::new(5).unwrap(), matcher: &m, property: None, label_source: None, embedder: None };
        let err = evaluate(&[dist("a", &[("cat", 1.0)])], &labels(&[("z", "cat")]), &opts).unwrap_err();
        assert_eq!(err.exit_code(), crate::error::EXIT_EMPTY);
    }
}
