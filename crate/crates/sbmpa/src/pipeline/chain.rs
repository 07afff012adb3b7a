//! Prompt chains: each stage asks about one property, with slots filled from
//! the aggregates of earlier stages (e.g. type, then "what material is {a}/this {T}").
//!
//! Stage file (TOML):
//!
//! ```toml
//! [[stage]]
//! property = "type"
//! modes = ["vlm"]
//! [[stage.template]]
//! id = "type-q0"
//! text = "What is this?"
//!
//! [[stage]]
//! property = "material"
//! modes = ["vlm", "llm"]
//! ruleset = "vqa-first-term"        # optional, overrides the run default
//! [[stage.template]]
//! id = "material-q0"
//! text = "What material is {a}/this {T} made of?"
//! [stage.slots.T]
//! property = "type"
//! policy = "mode_of_distribution"    # or { fixed = "spoon" }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use sbmpa_core::probes::{chain_order, plan_probes, resolve_slot, ChainError, ChainStage, PromptTemplate, SlotBinding};
use sbmpa_core::{AggMode, AggregateDistribution, CanonRuleset, Mode, ProbeFilter, ProbeRecord};

use super::aggregate::aggregate_records;
use super::probe::{bind_views, issue, ProbeFailure, ViewSelection};
use crate::backends::ScoredGenerator;
use crate::config::{load_ruleset, read_toml, ConfigError};
use crate::error::{list_some, RunError};
use crate::store::{Manifest, Record};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub property: String,
    pub modes: BTreeSet<Mode>,
    #[serde(rename = "template")]
    pub templates: Vec<PromptTemplate>,
    #[serde(default)]
    pub slots: BTreeMap<String, SlotBinding>,
    #[serde(default)]
    pub ruleset: Option<String>,
}

impl StageSpec {
    fn to_stage(&self) -> ChainStage {
        ChainStage {
            property: self.property.clone(),
            templates: self.templates.clone(),
            modes: self.modes.clone(),
            slots: self.slots.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainFile {
    #[serde(rename = "stage")]
    pub stages: Vec<StageSpec>,
}

impl ChainFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        read_toml(path)
    }
}

/// One prompt actually sent, with the slot values it was rendered with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub stage: String,
    pub object_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_id: Option<u32>,
    pub question_id: String,
    pub mode: Mode,
    pub prompt_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    pub slots: BTreeMap<String, String>,
}

impl Record for TraceEntry {
    const KIND: &'static str = "trace";
}

pub struct ChainSettings {
    pub views: ViewSelection,
    pub ruleset: CanonRuleset,
    pub mode: AggMode,
    pub num_candidates: usize,
    pub max_in_flight: usize,
    pub strict: bool,
}

#[derive(Debug, Clone)]
pub struct StageOutput {
    pub property: String,
    pub records: Vec<ProbeRecord>,
    pub aggregates: Vec<AggregateDistribution>,
    pub skipped: Vec<ProbeFailure>,
}

#[derive(Debug, Clone)]
pub struct ChainRun {
    /// In execution order.
    pub stages: Vec<StageOutput>,
    pub trace: Vec<TraceEntry>,
}

fn chain_error(e: ChainError) -> RunError {
    RunError::Config(e.to_string())
}

/// Runs the stages in dependency order over every manifest object.
///
/// A stage's aggregate uses its VLM records when it has any, otherwise its
/// LLM records; that aggregate is what later stages read their slots from.
pub fn run_chain<G: ScoredGenerator + ?Sized>(
    generator: &G,
    manifest: &Manifest,
    file: &ChainFile,
    settings: &ChainSettings,
) -> Result<ChainRun, RunError> {
    let stages: Vec<ChainStage> = file.stages.iter().map(StageSpec::to_stage).collect();
    let order = chain_order(&stages).map_err(chain_error)?;
    let rulesets = file
        .stages
        .iter()
        .map(|s| match &s.ruleset {
            Some(name) => load_ruleset(name).map_err(RunError::from),
            None => Ok(settings.ruleset.clone()),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let views = settings.views.resolve(manifest.view_count())?;

    let mut known: BTreeMap<(String, String), AggregateDistribution> = BTreeMap::new();
    let mut run = ChainRun { stages: Vec::new(), trace: Vec::new() };
    for i in order {
        let stage = &stages[i];
        let name = &stage.property;
        let mut probes = Vec::new();
        for object in &manifest.objects {
            let mut slots = BTreeMap::new();
            for (slot, binding) in &stage.slots {
                let value = resolve_slot(&object.object_id, &binding.property, &known, &binding.policy)
                    .map_err(|e| RunError::Empty(format!("stage {name}: {e}")))?;
                slots.insert(slot.clone(), value);
            }
            let stage_views: &[u32] = if stage.modes.contains(&Mode::Vlm) { &views } else { &[] };
            let plan = plan_probes(&object.object_id, &stage.templates, stage_views, &stage.modes, &slots)
                .map_err(|e| RunError::Config(format!("stage {name}, object {}: {e}", object.object_id)))?;
            for p in bind_views(&object.object_id, &object.view_refs, plan.probes) {
                run.trace.push(TraceEntry {
                    stage: name.clone(),
                    object_id: p.object_id.clone(),
                    view_id: p.probe.view_id,
                    question_id: p.probe.question_id.clone(),
                    mode: p.probe.mode,
                    prompt_text: p.probe.prompt_text.clone(),
                    image_ref: p.image_ref.clone(),
                    slots: slots.clone(),
                });
                probes.push(p);
            }
        }
        let issued = issue(generator, &probes, Some(name), settings.num_candidates, settings.max_in_flight, settings.strict)?;
        if !issued.failures.is_empty() {
            let msgs: Vec<String> = issued.failures.iter().map(ToString::to_string).collect();
            return Err(RunError::Backend(format!("stage {name}: {}", list_some(&msgs, 5))));
        }
        let agg_mode = if stage.modes.contains(&Mode::Vlm) { Mode::Vlm } else { Mode::Llm };
        let aggregated = aggregate_records(&issued.records, &ProbeFilter::all().with_mode(agg_mode), &rulesets[i], settings.mode)
            .map_err(|e| match e {
                RunError::Config(m) => RunError::Config(format!("stage {name}: {m}")),
                other => other,
            })?;
        for d in &aggregated.distributions {
            known.insert((d.object_id.clone(), d.property.clone()), d.clone());
        }
        run.stages.push(StageOutput {
            property: name.clone(),
            records: issued.records,
            aggregates: aggregated.distributions,
            skipped: issued.skipped,
        });
    }
    Ok(run)
}
