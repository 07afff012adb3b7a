//! How much the image changes the answer: Hellinger distance between
//! VLM-mode and LLM-mode distributions for the same object and question.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use sbmpa_core::curation::LabelSet;
use sbmpa_core::metrics::{
    accuracy_divergence_fit, divergence_report, soft_accuracy, DivergencePair, DivergenceReport, DivergenceRow, FitError,
    FitPoint, LinearFit, Matcher, PairDistance,
};
use sbmpa_core::{aggregate, AggMode, AggregateDistribution, CanonRuleset, Mode, ProbeFilter, ProbeRecord};

use crate::error::{list_some, RunError};
use crate::store::Record;

impl Record for DivergenceRow {
    const KIND: &'static str = "divergence";

    fn check(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.mean) || self.std < 0.0 || self.n == 0 {
            return Err(format!("row for {:?} is out of range", self.question_id));
        }
        Ok(())
    }
}

impl Record for PairDistance {
    const KIND: &'static str = "pair_distance";
}

/// One object's mean VLM/LLM distance against its VLM soft accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectPoint {
    pub object_id: String,
    pub distance: f64,
    pub accuracy: f64,
}

impl Record for ObjectPoint {
    const KIND: &'static str = "fit_point";
}

impl Record for LinearFit {
    const KIND: &'static str = "fit";
}

pub struct AblationInput<'a> {
    pub vlm: &'a [ProbeRecord],
    pub llm: &'a [ProbeRecord],
    pub ruleset: &'a CanonRuleset,
    pub mode: AggMode,
    /// Labels and matcher for the accuracy/divergence fit.
    pub labels: Option<(&'a LabelSet, &'a Matcher)>,
}

#[derive(Debug, Clone)]
pub struct AblationOutput {
    pub report: DivergenceReport,
    pub points: Vec<ObjectPoint>,
    /// Present when labels were given.
    pub fit: Option<Result<LinearFit, FitError>>,
}

type Key<'a> = (&'a str, &'a str, &'a str);

fn group<'a>(records: &'a [ProbeRecord], expected: Mode) -> Result<BTreeMap<Key<'a>, Vec<ProbeRecord>>, RunError> {
    let mut out: BTreeMap<Key<'a>, Vec<ProbeRecord>> = BTreeMap::new();
    for r in records {
        if r.mode != expected {
            return Err(RunError::Config(format!(
                "{expected} probe file contains a {} record ({} / {})",
                r.mode, r.object_id, r.question_id
            )));
        }
        out.entry((r.object_id.as_str(), r.property(), r.question_id.as_str())).or_default().push(r.clone());
    }
    Ok(out)
}

fn agg(records: &[ProbeRecord], input: &AblationInput<'_>, property: &str) -> Result<AggregateDistribution, RunError> {
    aggregate(records, &ProbeFilter::all(), input.ruleset, input.mode, property).map_err(|e| {
        RunError::Empty(format!("{} / {}: {e}", records[0].object_id, records[0].question_id))
    })
}

/// Pairs VLM and LLM records by (object, property, question) and reports distances.
///
/// Every key must appear on both sides; unpaired keys are listed in the error.
pub fn run_ablation(input: &AblationInput<'_>) -> Result<AblationOutput, RunError> {
    let vlm = group(input.vlm, Mode::Vlm)?;
    let llm = group(input.llm, Mode::Llm)?;
    let vlm_keys: BTreeSet<&Key<'_>> = vlm.keys().collect();
    let llm_keys: BTreeSet<&Key<'_>> = llm.keys().collect();
    let unpaired: Vec<String> = vlm_keys
        .symmetric_difference(&llm_keys)
        .map(|(o, p, q)| format!("{o}/{p}/{q} ({})", if vlm.contains_key(&(o, p, q)) { "vlm only" } else { "llm only" }))
        .collect();
    if !unpaired.is_empty() {
        return Err(RunError::Empty(format!("unpairable records: {}", list_some(&unpaired, 20))));
    }
    if vlm.is_empty() {
        return Err(RunError::Empty("no probe records".into()));
    }

    let mut dists = Vec::with_capacity(vlm.len());
    for (key, v) in &vlm {
        let (_, property, _) = *key;
        dists.push((*key, agg(v, input, property)?, agg(&llm[key], input, property)?));
    }
    let pairs: Vec<DivergencePair<'_>> =
        dists.iter().map(|((_, _, q), v, l)| DivergencePair { question_id: q, vlm: v, llm: l }).collect();
    let report = divergence_report(&pairs, input.ruleset).map_err(|e| RunError::Config(e.to_string()))?;

    let mut points = Vec::new();
    let fit = match input.labels {
        None => None,
        Some((labels, matcher)) => {
            let mut per_object: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
            for (((o, p, _), _, _), d) in dists.iter().zip(&report.pairs) {
                per_object.entry((o, p)).or_default().push(d.distance);
            }
            for ((object_id, property), distances) in per_object {
                let Some(label) = labels.records.iter().find(|r| r.object_id == object_id && r.property == property)
                else {
                    continue;
                };
                let records: Vec<ProbeRecord> = vlm
                    .iter()
                    .filter(|((o, p, _), _)| *o == object_id && *p == property)
                    .flat_map(|(_, rs)| rs.iter().cloned())
                    .collect();
                let whole = agg(&records, input, property)?;
                let accuracy = soft_accuracy(&whole, &label.label, matcher).map_err(|e| RunError::Config(e.to_string()))?;
                let distance = sbmpa_core::numeric::mean_std(&distances).expect("non-empty").0;
                points.push(ObjectPoint { object_id: object_id.to_string(), distance, accuracy });
            }
            let fit_points: Vec<FitPoint> =
                points.iter().map(|p| FitPoint { distance: p.distance, accuracy: p.accuracy }).collect();
            Some(accuracy_divergence_fit(&fit_points))
        }
    };
    Ok(AblationOutput { report, points, fit })
}

/// Per-question table: mean ± std of the distance, two decimals.
pub fn format_report(report: &DivergenceReport) -> String {
    let mut out = format!("{:<16}{:<16}{}\n", "question", "hellinger", "n");
    for r in &report.rows {
        out.push_str(&format!("{:<16}{:<16}{}\n", r.question_id, format!("{:.2} ± {:.2}", r.mean, r.std), r.n));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use sbmpa_core::ScoredResponse;

    fn rec(object: &str, q: &str, mode: Mode, texts: &[&str]) -> ProbeRecord {
        ProbeRecord {
            object_id: object.into(),
            view_id: (mode == Mode::Vlm).then_some(0),
            question_id: q.into(),
            prompt_text: "p".into(),
            mode,
            responses: texts.iter().map(|t| ScoredResponse::new(*t, -1.0)).collect(),
            property: None,
            backend_id: None,
        }
    }

    fn input<'a>(vlm: &'a [ProbeRecord], llm: &'a [ProbeRecord], ruleset: &'a CanonRuleset) -> AblationInput<'a> {
        AblationInput { vlm, llm, ruleset, mode: AggMode::Lse, labels: None }
    }

    #[test]
    fn identical_and_disjoint() {
        let id = CanonRuleset::identity();
        let vlm = [rec("a", "q0", Mode::Vlm, &["cat", "dog"]), rec("a", "q1", Mode::Vlm, &["cat"])];
        let llm = [rec("a", "q0", Mode::Llm, &["cat", "dog"]), rec("a", "q1", Mode::Llm, &["fish"])];
        let out = run_ablation(&input(&vlm, &llm, &id)).unwrap();
        assert_eq!(out.report.row("q0").unwrap().mean, 0.0);
        assert_eq!(out.report.row("q1").unwrap().mean, 1.0);
    }

    #[test]
    fn unpaired_listed() {
        let id = CanonRuleset::identity();
        let vlm = [rec("a", "q0", Mode::Vlm, &["cat"]), rec("b", "q0", Mode::Vlm, &["cat"])];
        let llm = [rec("a", "q0", Mode::Llm, &["cat"])];
        let err = run_ablation(&input(&vlm, &llm, &id)).unwrap_err();
        assert_eq!(err.exit_code(), crate::error::EXIT_EMPTY);
        assert!(err.to_string().contains("b/type/q0 (vlm only)"), "{err}");
    }

    #[test]
    fn wrong_mode_is_config_error() {
        let id = CanonRuleset::identity();
        let vlm = [rec("a", "q0", Mode::Llm, &["cat"])];
        assert_eq!(run_ablation(&input(&vlm, &vlm, &id)).unwrap_err().exit_code(), crate::error::EXIT_CONFIG);
    }
}
