//! Hellinger distance between aggregate distributions and per-question reports.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::canon::{canonicalize, CanonError, CanonRuleset};
use crate::model::AggregateDistribution;
use crate::numeric::{mean_std, neumaier_sum};

/// Folds a distribution onto canonical forms under `ruleset`, merging collided mass.
pub fn align(
    dist: &AggregateDistribution,
    ruleset: &CanonRuleset,
) -> Result<BTreeMap<String, f64>, CanonError> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for e in &dist.entries {
        out.entry(canonicalize(&e.canonical, ruleset)?).or_default().push(e.prob);
    }
    Ok(out
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by(|a, b| b.total_cmp(a));
            (k, neumaier_sum(v))
        })
        .collect())
}

/// Hellinger distance between two probability maps, absent keys carrying zero mass.
pub fn hellinger_maps(p: &BTreeMap<String, f64>, q: &BTreeMap<String, f64>) -> f64 {
    let mut keys: Vec<&String> = p.keys().chain(q.keys()).collect();
    keys.sort();
    keys.dedup();
    let terms = keys.into_iter().map(|k| {
        let a = libm::sqrt(p.get(k).copied().unwrap_or(0.0).max(0.0));
        let b = libm::sqrt(q.get(k).copied().unwrap_or(0.0).max(0.0));
        (a - b) * (a - b)
    });
    libm::sqrt(0.5 * neumaier_sum(terms)).clamp(0.0, 1.0)
}

/// Hellinger distance over the union of the two supports after alignment.
pub fn hellinger(
    p: &AggregateDistribution,
    q: &AggregateDistribution,
    align_ruleset: &CanonRuleset,
) -> Result<f64, CanonError> {
    Ok(hellinger_maps(&align(p, align_ruleset)?, &align(q, align_ruleset)?))
}

/// One VLM-mode / LLM-mode pair of distributions for the same object and question.
#[derive(Debug, Clone, Copy)]
pub struct DivergencePair<'a> {
    pub question_id: &'a str,
    pub vlm: &'a AggregateDistribution,
    pub llm: &'a AggregateDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDistance {
    pub object_id: String,
    pub question_id: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRow {
    pub question_id: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Per-question mean and population standard deviation of Hellinger distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub rows: Vec<DivergenceRow>,
    pub pairs: Vec<PairDistance>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DivergenceError {
    #[error("pair for question {question_id:?} mixes objects {vlm:?} and {llm:?}")]
    ObjectMismatch { question_id: String, vlm: String, llm: String },
    #[error(transparent)]
    Canon(#[from] CanonError),
}

impl DivergenceReport {
    pub fn from_distances(pairs: Vec<PairDistance>) -> Self {
        let mut by_question: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for p in &pairs {
            by_question.entry(p.question_id.as_str()).or_default().push(p.distance);
        }
        let rows = by_question
            .into_iter()
            .map(|(q, ds)| {
                let (mean, std) = mean_std(&ds).expect("every group has at least one pair");
                DivergenceRow { question_id: q.to_string(), mean, std, n: ds.len() }
            })
            .collect();
        DivergenceReport { rows, pairs }
    }

    pub fn row(&self, question_id: &str) -> Option<&DivergenceRow> {
        self.rows.iter().find(|r| r.question_id == question_id)
    }
}

pub fn divergence_report(
    pairs: &[DivergencePair<'_>],
    align_ruleset: &CanonRuleset,
) -> Result<DivergenceReport, DivergenceError> {
    let mut distances = Vec::with_capacity(pairs.len());
    for pair in pairs {
        if pair.vlm.object_id != pair.llm.object_id {
            return Err(DivergenceError::ObjectMismatch {
                question_id: pair.question_id.to_string(),
                vlm: pair.vlm.object_id.clone(),
                llm: pair.llm.object_id.clone(),
            });
        }
        distances.push(PairDistance {
            object_id: pair.vlm.object_id.clone(),
            question_id: pair.question_id.to_string(),
            distance: hellinger(pair.vlm, pair.llm, align_ruleset)?,
        });
    }
    Ok(DivergenceReport::from_distances(distances))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DistributionEntry;
    use alloc::vec;

    fn dist(object: &str, entries: &[(&str, f64)]) -> AggregateDistribution {
        AggregateDistribution {
            object_id: object.into(),
            property: "p".into(),
            entries: entries
                .iter()
                .map(|(c, p)| DistributionEntry {
                    canonical: c.to_string(),
                    agg_score: 0.0,
                    prob: *p,
                    provenance: vec![],
                })
                .collect(),
        }
    }

    #[test]
    fn worked_values() {
        let id = CanonRuleset::identity();
        let p = dist("o", &[("a", 1.0)]);
        let q = dist("o", &[("a", 0.5), ("b", 0.5)]);
        assert_eq!(hellinger(&p, &p, &id).unwrap(), 0.0);
        assert_eq!(hellinger(&p, &dist("o", &[("b", 1.0)]), &id).unwrap(), 1.0);
        // sqrt(0.5 * ((1 - sqrt 0.5)^2 + 0.5)) to 20 digits: 0.54119610014619698440
        assert!((hellinger(&p, &q, &id).unwrap() - 0.541_196_100_146_197).abs() < 1e-15);
    }

    #[test]
    fn alignment_merges_mass() {
        let p = dist("o", &[("Wood", 0.5), ("wood.", 0.5)]);
        let q = dist("o", &[("wood", 1.0)]);
        assert_eq!(hellinger(&p, &q, &CanonRuleset::caption()).unwrap(), 0.0);
        assert!(hellinger(&p, &q, &CanonRuleset::identity()).unwrap() > 0.9);
    }

    #[test]
    fn report_rows() {
        let id = CanonRuleset::identity();
        let a = dist("o1", &[("x", 1.0)]);
        let b = dist("o1", &[("y", 1.0)]);
        let c = dist("o2", &[("x", 1.0)]);
        let r = divergence_report(&[DivergencePair { question_id: "q0", vlm: &a, llm: &a }], &id).unwrap();
        assert_eq!(r.rows, vec![DivergenceRow { question_id: "q0".into(), mean: 0.0, std: 0.0, n: 1 }]);

        let r = divergence_report(
            &[
                DivergencePair { question_id: "q", vlm: &a, llm: &a },
                DivergencePair { question_id: "q", vlm: &a, llm: &b },
            ],
            &id,
        )
        .unwrap();
        assert_eq!(r.row("q").unwrap(), &DivergenceRow { question_id: "q".into(), mean: 0.5, std: 0.5, n: 2 });

        let err = divergence_report(&[DivergencePair { question_id: "q", vlm: &a, llm: &c }], &id);
        assert!(matches!(err, Err(DivergenceError::ObjectMismatch { .. })));
    }

    #[test]
    fn constant_distances() {
        let r = DivergenceReport::from_distances(
            (0..3)
                .map(|i| PairDistance { object_id: alloc::format!("o{i}"), question_id: "q".into(), distance: 0.1 })
                .collect(),
        );
        assert_eq!(r.rows[0], DivergenceRow { question_id: "q".into(), mean: 0.1, std: 0.0, n: 3 });
    }
}
