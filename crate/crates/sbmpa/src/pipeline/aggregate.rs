//! One distribution per (object, property) from a probe record file.

use std::collections::BTreeMap;

use sbmpa_core::{aggregate, AggMode, AggregateDistribution, AggregateError, CanonRuleset, ProbeFilter, ProbeRecord};

use crate::error::RunError;

/// An (object, property) group that produced no distribution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmptyAggregate {
    pub object_id: String,
    pub property: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct AggregateRun {
    /// Sorted by (object, property).
    pub distributions: Vec<AggregateDistribution>,
    pub empty: Vec<EmptyAggregate>,
}

/// Groups records by (object, property) and aggregates each group.
///
/// Groups with nothing left after filtering, or whose responses all
/// canonicalize to the empty string, are reported in `empty`.
pub fn aggregate_records(
    records: &[ProbeRecord],
    filter: &ProbeFilter,
    ruleset: &CanonRuleset,
    mode: AggMode,
) -> Result<AggregateRun, RunError> {
    let mut groups: BTreeMap<(&str, &str), Vec<ProbeRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.object_id.as_str(), r.property())).or_default().push(r.clone());
    }
    let mut run = AggregateRun::default();
    for ((object_id, property), group) in groups {
        match aggregate(&group, filter, ruleset, mode, property) {
            Ok(d) => run.distributions.push(d),
            Err(e @ (AggregateError::NoRecordsAfterFilter | AggregateError::EmptyAggregation)) => {
                run.empty.push(EmptyAggregate {
                    object_id: object_id.to_string(),
                    property: property.to_string(),
                    reason: e.to_string(),
                })
            }
            Err(e) => return Err(RunError::Config(format!("object {object_id} ({property}): {e}"))),
        }
    }
    Ok(run)
}

/// Distributions keyed by (object, property), as later chain stages look them up.
pub fn index(distributions: &[AggregateDistribution]) -> BTreeMap<(String, String), AggregateDistribution> {
    distributions
        .iter()
        .map(|d| ((d.object_id.clone(), d.property.clone()), d.clone()))
        .collect()
}
