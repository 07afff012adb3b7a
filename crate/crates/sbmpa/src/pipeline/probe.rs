//! Fan templates out over objects and views and collect scored responses.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use sbmpa_core::probes::{plan_probes, PlannedProbe, PromptTemplate};
use sbmpa_core::{Mode, ProbeRecord};

use crate::backends::{batch_generate, BackendError, GenerationRequest, ScoredGenerator};
use crate::error::RunError;
use crate::store::Manifest;

/// Which views of each object to probe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViewSelection {
    All,
    List(Vec<u32>),
}

impl FromStr for ViewSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim() == "all" {
            return Ok(ViewSelection::All);
        }
        let ids: BTreeSet<u32> = s
            .split(',')
            .map(|v| v.trim().parse::<u32>().map_err(|_| format!("bad view id {v:?}")))
            .collect::<Result<_, _>>()?;
        if ids.is_empty() {
            return Err("empty view list".into());
        }
        Ok(ViewSelection::List(ids.into_iter().collect()))
    }
}

impl fmt::Display for ViewSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViewSelection::All => f.write_str("all"),
            ViewSelection::List(ids) => {
                let parts: Vec<String> = ids.iter().map(u32::to_string).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

impl ViewSelection {
    pub fn resolve(&self, view_count: usize) -> Result<Vec<u32>, RunError> {
        match self {
            ViewSelection::All => Ok((0..view_count as u32).collect()),
            ViewSelection::List(ids) => match ids.iter().find(|&&v| v as usize >= view_count) {
                Some(v) => Err(RunError::Config(format!("view {v} out of range (objects have {view_count} views)"))),
                None => Ok(ids.clone()),
            },
        }
    }
}

/// Parses `vlm`, `llm` or `vlm,llm`.
pub fn parse_modes(s: &str) -> Result<BTreeSet<Mode>, String> {
    let modes: BTreeSet<Mode> = s.split(',').map(str::parse).collect::<Result<_, _>>()?;
    if modes.is_empty() {
        return Err("no modes given".into());
    }
    Ok(modes)
}

#[derive(Debug, Clone)]
pub struct ProbeOptions {
    pub views: ViewSelection,
    pub modes: BTreeSet<Mode>,
    /// Fixed slot values, e.g. `T` -> `spoon`.
    pub slots: BTreeMap<String, String>,
    pub property: Option<String>,
    pub num_candidates: usize,
    pub max_in_flight: usize,
    /// Treat replay misses as hard errors instead of skipping the probe.
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFailure {
    pub object_id: String,
    pub view_id: Option<u32>,
    pub question_id: String,
    pub mode: Mode,
    pub error: BackendError,
}

impl fmt::Display for ProbeFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}/{}", self.object_id, self.mode, self.question_id)?;
        if let Some(v) = self.view_id {
            write!(f, " view {v}")?;
        }
        write!(f, ": {}", self.error)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ProbeRun {
    pub planned: usize,
    pub records: Vec<ProbeRecord>,
    /// Hard errors.
    pub failures: Vec<ProbeFailure>,
    /// Replay misses tolerated in non-strict mode.
    pub skipped: Vec<ProbeFailure>,
}

impl ProbeRun {
    pub fn summary(&self) -> String {
        format!(
            "probes: {} planned, {} recorded, {} errors, {} skipped",
            self.planned,
            self.records.len(),
            self.failures.len(),
            self.skipped.len()
        )
    }
}

/// A planned probe bound to its object and (in VLM mode) its view image.
#[derive(Debug, Clone)]
pub struct IssuedProbe {
    pub object_id: String,
    pub probe: PlannedProbe,
    pub image_ref: Option<String>,
}

pub(crate) fn record_order(a: &ProbeRecord, b: &ProbeRecord) -> std::cmp::Ordering {
    (a.object_id.as_str(), a.mode, a.view_id, a.question_id.as_str())
        .cmp(&(b.object_id.as_str(), b.mode, b.view_id, b.question_id.as_str()))
}

/// Sends every probe through the backend and turns the answers into records.
///
/// Records come back sorted by (object, mode, view, question) whatever the
/// completion order was.
pub fn issue<G: ScoredGenerator + ?Sized>(
    generator: &G,
    probes: &[IssuedProbe],
    property: Option<&str>,
    num_candidates: usize,
    max_in_flight: usize,
    strict: bool,
) -> Result<ProbeRun, RunError> {
    let requests: Vec<GenerationRequest> = probes
        .iter()
        .map(|p| GenerationRequest {
            prompt: p.probe.prompt_text.clone(),
            image_ref: p.image_ref.clone(),
            num_candidates,
        })
        .collect();
    let results = batch_generate(generator, &requests, max_in_flight).map_err(|e| RunError::Config(e.to_string()))?;
    let mut run = ProbeRun { planned: probes.len(), ..ProbeRun::default() };
    for (p, result) in probes.iter().zip(results) {
        let fail = |error| ProbeFailure {
            object_id: p.object_id.clone(),
            view_id: p.probe.view_id,
            question_id: p.probe.question_id.clone(),
            mode: p.probe.mode,
            error,
        };
        match result {
            Ok(r) if r.candidates.is_empty() => {
                run.failures.push(fail(BackendError::ProtocolError("backend returned no candidates".into())))
            }
            Ok(r) => run.records.push(ProbeRecord {
                object_id: p.object_id.clone(),
                view_id: p.probe.view_id,
                question_id: p.probe.question_id.clone(),
                prompt_text: p.probe.prompt_text.clone(),
                mode: p.probe.mode,
                responses: r.candidates,
                property: property.map(String::from),
                backend_id: Some(r.backend_id),
            }),
            Err(e @ BackendError::ReplayMiss(_)) if !strict => run.skipped.push(fail(e)),
            Err(e) => run.failures.push(fail(e)),
        }
    }
    run.records.sort_by(record_order);
    Ok(run)
}

/// Binds each planned probe to its object's view image.
pub fn bind_views(object_id: &str, view_refs: &[String], planned: Vec<PlannedProbe>) -> Vec<IssuedProbe> {
    planned
        .into_iter()
        .map(|probe| IssuedProbe {
            object_id: object_id.to_string(),
            image_ref: probe.view_id.and_then(|v| view_refs.get(v as usize).cloned()),
            probe,
        })
        .collect()
}

/// Probes every manifest object with every template.
pub fn run_probes<G: ScoredGenerator + ?Sized>(
    generator: &G,
    manifest: &Manifest,
    templates: &[PromptTemplate],
    options: &ProbeOptions,
) -> Result<ProbeRun, RunError> {
    let views = if options.modes.contains(&Mode::Vlm) {
        options.views.resolve(manifest.view_count())?
    } else {
        Vec::new()
    };
    let mut probes = Vec::new();
    for object in &manifest.objects {
        let plan = plan_probes(&object.object_id, templates, &views, &options.modes, &options.slots)
            .map_err(|e| RunError::Config(format!("object {}: {e}", object.object_id)))?;
        probes.extend(bind_views(&object.object_id, &object.view_refs, plan.probes));
    }
    issue(
        generator,
        &probes,
        options.property.as_deref(),
        options.num_candidates,
        options.max_in_flight,
        options.strict,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn view_selection_parsing() {
        assert_eq!("all".parse::<ViewSelection>().unwrap(), ViewSelection::All);
        assert_eq!("3,1,3".parse::<ViewSelection>().unwrap(), ViewSelection::List(vec![1, 3]));
        assert!("1,x".parse::<ViewSelection>().is_err());
        assert_eq!(ViewSelection::All.resolve(3).unwrap(), vec![0, 1, 2]);
        assert!(ViewSelection::List(vec![8]).resolve(8).is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!(parse_modes("vlm,llm").unwrap().len(), 2);
        assert!(parse_modes("vlm,xyz").is_err());
    }
}
