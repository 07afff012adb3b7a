//! Prompt templates, probe plans and prompt chaining.
//!
//! Template text uses three kinds of markers:
//!
//! * `{T}`, `{M}`, ... (an uppercase name): a slot, filled verbatim.
//! * `{a}`: an indefinite article, rendered as "a" or "an" depending on the
//!   word that follows it in the rendered prompt.
//! * `{a}/WORD`: a determiner pair. LLM mode renders the article, VLM mode
//!   renders `WORD` (usually "this" or "the"). `Is {a}/this {T} fragile?`
//!   becomes "Is a spoon fragile?" without an image and "Is this spoon
//!   fragile?" with one.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::{AggregateDistribution, Mode};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("template {template:?} needs slot {{{slot}}} but no value was given")]
    MissingSlot { template: String, slot: String },
    #[error("template {template:?} has an unresolved placeholder {placeholder:?}")]
    UnresolvedPlaceholder { template: String, placeholder: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(String),
    Article,
    Determiner(String),
}

fn is_slot_name(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_uppercase())
        && chars.all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

fn parse_pieces(template_id: &str, text: &str) -> Result<Vec<Piece>, TemplateError> {
    let unresolved = |p: &str| TemplateError::UnresolvedPlaceholder {
        template: template_id.to_string(),
        placeholder: p.to_string(),
    };
    let mut pieces = Vec::new();
    let mut literal = String::new();
    let mut rest = text;
    while let Some(open) = rest.find(['{', '}']) {
        literal.push_str(&rest[..open]);
        if rest[open..].starts_with('}') {
            return Err(unresolved("}"));
        }
        let after = &rest[open + 1..];
        let close = after.find('}').ok_or_else(|| unresolved(&rest[open..]))?;
        let name = &after[..close];
        rest = &after[close + 1..];
        if !literal.is_empty() {
            pieces.push(Piece::Text(core::mem::take(&mut literal)));
        }
        if name == "a" {
            if let Some(alt) = rest.strip_prefix('/') {
                let end = alt.find(|c: char| !c.is_alphanumeric()).unwrap_or(alt.len());
                if end == 0 {
                    return Err(unresolved("{a}/"));
                }
                pieces.push(Piece::Determiner(alt[..end].to_string()));
                rest = &alt[end..];
            } else {
                pieces.push(Piece::Article);
            }
        } else if is_slot_name(name) {
            pieces.push(Piece::Slot(name.to_string()));
        } else {
            return Err(unresolved(&alloc::format!("{{{name}}}")));
        }
    }
    literal.push_str(rest);
    if !literal.is_empty() {
        pieces.push(Piece::Text(literal));
    }
    Ok(pieces)
}

const A_PREFIXES: [&str; 8] = ["one", "once", "uni", "use", "usu", "eu", "ewe", "ubiq"];
const AN_PREFIXES: [&str; 5] = ["hour", "honest", "honor", "honour", "heir"];

/// "a" or "an" for the word that follows.
pub fn indefinite_article(next_word: &str) -> &'static str {
    let word: String = next_word
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .chars()
        .flat_map(char::to_lowercase)
        .collect();
    if A_PREFIXES.iter().any(|p| word.starts_with(p)) {
        return "a";
    }
    if AN_PREFIXES.iter().any(|p| word.starts_with(p)) {
        return "an";
    }
    match word.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

/// A question with slot and article markers, optionally with explicit per-mode texts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vlm_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_text: Option<String>,
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        PromptTemplate { id: id.into(), text: text.into(), vlm_text: None, llm_text: None }
    }

    fn text_for(&self, mode: Mode) -> &str {
        match mode {
            Mode::Vlm => self.vlm_text.as_deref().unwrap_or(&self.text),
            Mode::Llm => self.llm_text.as_deref().unwrap_or(&self.text),
        }
    }

    /// Slot names the template needs in either mode.
    pub fn required_slots(&self) -> Result<BTreeSet<String>, TemplateError> {
        let mut out = BTreeSet::new();
        for mode in [Mode::Vlm, Mode::Llm] {
            for piece in parse_pieces(&self.id, self.text_for(mode))? {
                if let Piece::Slot(name) = piece {
                    out.insert(name);
                }
            }
        }
        Ok(out)
    }

    /// Checks that every marker parses and that both modes use the same slots.
    pub fn validate(&self) -> Result<(), TemplateError> {
        let slots = |mode| -> Result<BTreeSet<String>, TemplateError> {
            Ok(parse_pieces(&self.id, self.text_for(mode))?
                .into_iter()
                .filter_map(|p| if let Piece::Slot(n) = p { Some(n) } else { None })
                .collect())
        };
        let (v, l) = (slots(Mode::Vlm)?, slots(Mode::Llm)?);
        if let Some(missing) = v.symmetric_difference(&l).next() {
            return Err(TemplateError::UnresolvedPlaceholder {
                template: self.id.clone(),
                placeholder: alloc::format!("{{{missing}}} appears in only one mode"),
            });
        }
        Ok(())
    }
}

/// Renders `template` for `mode`, filling slots verbatim and resolving articles.
pub fn render_prompt(
    template: &PromptTemplate,
    mode: Mode,
    slots: &BTreeMap<String, String>,
) -> Result<String, TemplateError> {
    enum Out {
        Text(String),
        Article,
    }
    let mut out = Vec::new();
    for piece in parse_pieces(&template.id, template.text_for(mode))? {
        match piece {
            Piece::Text(t) => out.push(Out::Text(t)),
            Piece::Slot(name) => match slots.get(&name) {
                Some(v) => out.push(Out::Text(v.clone())),
                None => {
                    return Err(TemplateError::MissingSlot { template: template.id.clone(), slot: name })
                }
            },
            Piece::Article => out.push(Out::Article),
            Piece::Determiner(word) => match mode {
                Mode::Vlm => out.push(Out::Text(word)),
                Mode::Llm => out.push(Out::Article),
            },
        }
    }
    let mut rendered = String::new();
    for i in 0..out.len() {
        match &out[i] {
            Out::Text(t) => rendered.push_str(t),
            Out::Article => {
                let following: String = out[i + 1..]
                    .iter()
                    .map(|o| match o {
                        Out::Text(t) => t.as_str(),
                        Out::Article => "a",
                    })
                    .collect();
                let next_word = following.split_whitespace().next().unwrap_or("");
                rendered.push_str(indefinite_article(next_word));
            }
        }
    }
    Ok(rendered)
}

/// One query to issue: a rendered prompt, in a mode, optionally against a view.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedProbe {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_id: Option<u32>,
    pub question_id: String,
    pub prompt_text: String,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbePlan {
    pub object_id: String,
    pub probes: Vec<PlannedProbe>,
    pub upstream_requirements: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("vlm mode requested but no views given")]
    NoViews,
    #[error("no templates given")]
    EmptyTemplates,
    #[error("no modes given")]
    NoModes,
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Fans templates out over views (VLM mode) and once each without an image (LLM mode).
///
/// The plan holds `templates × views` VLM probes plus one LLM probe per template.
pub fn plan_probes(
    object_id: &str,
    templates: &[PromptTemplate],
    views: &[u32],
    modes: &BTreeSet<Mode>,
    slots: &BTreeMap<String, String>,
) -> Result<ProbePlan, PlanError> {
    if templates.is_empty() {
        return Err(PlanError::EmptyTemplates);
    }
    if modes.is_empty() {
        return Err(PlanError::NoModes);
    }
    if modes.contains(&Mode::Vlm) && views.is_empty() {
        return Err(PlanError::NoViews);
    }
    let mut upstream = BTreeSet::new();
    let mut probes = Vec::new();
    for template in templates {
        template.validate()?;
        upstream.extend(template.required_slots()?);
        if modes.contains(&Mode::Vlm) {
            let prompt_text = render_prompt(template, Mode::Vlm, slots)?;
            for &view in views {
                probes.push(PlannedProbe {
                    view_id: Some(view),
                    question_id: template.id.clone(),
                    prompt_text: prompt_text.clone(),
                    mode: Mode::Vlm,
                });
            }
        }
        if modes.contains(&Mode::Llm) {
            probes.push(PlannedProbe {
                view_id: None,
                question_id: template.id.clone(),
                prompt_text: render_prompt(template, Mode::Llm, slots)?,
                mode: Mode::Llm,
            });
        }
    }
    Ok(ProbePlan { object_id: object_id.to_string(), probes, upstream_requirements: upstream })
}

/// How a slot gets its value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotPolicy {
    /// Likeliest canonical of the upstream aggregate.
    ModeOfDistribution,
    Fixed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SlotError {
    #[error("no upstream aggregate for property {property:?} of object {object_id:?}")]
    MissingUpstreamAggregate { object_id: String, property: String },
    #[error("fixed slot value is empty")]
    EmptyFixedValue,
}

/// Read access to stored aggregates, keyed by (object, property).
pub trait AggregateLookup {
    fn aggregate(&self, object_id: &str, property: &str) -> Option<&AggregateDistribution>;
}

impl AggregateLookup for BTreeMap<(String, String), AggregateDistribution> {
    fn aggregate(&self, object_id: &str, property: &str) -> Option<&AggregateDistribution> {
        self.get(&(object_id.to_string(), property.to_string()))
    }
}

pub fn resolve_slot<L: AggregateLookup + ?Sized>(
    object_id: &str,
    property: &str,
    aggregates: &L,
    policy: &SlotPolicy,
) -> Result<String, SlotError> {
    match policy {
        SlotPolicy::Fixed(v) if v.is_empty() => Err(SlotError::EmptyFixedValue),
        SlotPolicy::Fixed(v) => Ok(v.clone()),
        SlotPolicy::ModeOfDistribution => aggregates
            .aggregate(object_id, property)
            .and_then(AggregateDistribution::mode)
            .map(ToString::to_string)
            .ok_or_else(|| SlotError::MissingUpstreamAggregate {
                object_id: object_id.to_string(),
                property: property.to_string(),
            }),
    }
}

/// A slot bound to an upstream property (or a fixed value).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotBinding {
    pub property: String,
    pub policy: SlotPolicy,
}

/// One step of a chain: probe for `property`, with slots bound to earlier results.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainStage {
    pub property: String,
    pub templates: Vec<PromptTemplate>,
    pub modes: BTreeSet<Mode>,
    /// Placeholder name (e.g. `T`) to its binding.
    pub slots: BTreeMap<String, SlotBinding>,
}

impl ChainStage {
    /// Properties this stage reads from earlier stages.
    pub fn dependencies(&self) -> BTreeSet<&str> {
        self.slots
            .values()
            .filter(|b| b.policy == SlotPolicy::ModeOfDistribution)
            .map(|b| b.property.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChainError {
    #[error("stages form a dependency cycle through {0:?}")]
    CyclicDependency(Vec<String>),
    #[error("stage {stage:?} reads property {property:?} that no stage produces")]
    UnknownUpstream { stage: String, property: String },
    #[error("stage {stage:?} uses slot {{{slot}}} without binding it")]
    UnboundSlot { stage: String, slot: String },
    #[error("two stages produce property {0:?}")]
    DuplicateProperty(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Orders stages so every slot is produced before it is read.
///
/// Stages already in a valid order keep it; otherwise the earliest ready stage
/// runs first. Returns indices into `stages`.
pub fn chain_order(stages: &[ChainStage]) -> Result<Vec<usize>, ChainError> {
    let mut producers: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, s) in stages.iter().enumerate() {
        if producers.insert(s.property.as_str(), i).is_some() {
            return Err(ChainError::DuplicateProperty(s.property.clone()));
        }
    }
    for s in stages {
        for t in &s.templates {
            for slot in t.required_slots()? {
                if !s.slots.contains_key(&slot) {
                    return Err(ChainError::UnboundSlot { stage: s.property.clone(), slot });
                }
            }
        }
        for dep in s.dependencies() {
            if !producers.contains_key(dep) {
                return Err(ChainError::UnknownUpstream {
                    stage: s.property.clone(),
                    property: dep.to_string(),
                });
            }
        }
    }
    let mut done = alloc::vec![false; stages.len()];
    let mut order = Vec::with_capacity(stages.len());
    while order.len() < stages.len() {
        let ready = (0..stages.len()).find(|&i| {
            !done[i] && stages[i].dependencies().iter().all(|d| done[producers[d]])
        });
        match ready {
            Some(i) => {
                done[i] = true;
                order.push(i);
            }
            None => {
                let stuck = (0..stages.len())
                    .filter(|&i| !done[i])
                    .map(|i| stages[i].property.clone())
                    .collect();
                return Err(ChainError::CyclicDependency(stuck));
            }
        }
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn slots(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn determiner_pair() {
        let t = PromptTemplate::new("fragile", "Is {a}/this {T} fragile?");
        let s = slots(&[("T", "spoon")]);
        assert_eq!(render_prompt(&t, Mode::Llm, &s).unwrap(), "Is a spoon fragile?");
        assert_eq!(render_prompt(&t, Mode::Vlm, &s).unwrap(), "Is this spoon fragile?");
        let s = slots(&[("T", "iceberg")]);
        assert_eq!(render_prompt(&t, Mode::Llm, &s).unwrap(), "Is an iceberg fragile?");
    }

    #[test]
    fn bare_article_follows_slot_value() {
        let t = PromptTemplate::new("color", "What color is {a} {T}?");
        assert_eq!(
            render_prompt(&t, Mode::Llm, &slots(&[("T", "iceberg")])).unwrap(),
            "What color is an iceberg?"
        );
        let t = PromptTemplate::new("lift", "Can a human lift {a} {M} {T}?");
        assert_eq!(
            render_prompt(&t, Mode::Llm, &slots(&[("M", "steel"), ("T", "spoon")])).unwrap(),
            "Can a human lift a steel spoon?"
        );
        assert_eq!(
            render_prompt(&t, Mode::Llm, &slots(&[("M", "oak"), ("T", "spoon")])).unwrap(),
            "Can a human lift an oak spoon?"
        );
    }

    #[test]
    fn article_exceptions() {
        for (w, a) in [
            ("unicorn", "a"),
            ("university", "a"),
            ("unique", "a"),
            ("user", "a"),
            ("one", "a"),
            ("hour", "an"),
            ("honest", "an"),
            ("heir", "an"),
            ("umbrella", "an"),
            ("Apple", "an"),
            ("house", "a"),
            ("", "a"),
        ] {
            assert_eq!(indefinite_article(w), a, "{w}");
        }
    }

    #[test]
    fn render_errors() {
        let t = PromptTemplate::new("x", "Is {a}/this {T} fragile?");
        assert_eq!(
            render_prompt(&t, Mode::Vlm, &BTreeMap::new()),
            Err(TemplateError::MissingSlot { template: "x".into(), slot: "T".into() })
        );
        let t = PromptTemplate::new("y", "What is {thing}?");
        assert!(matches!(
            render_prompt(&t, Mode::Vlm, &BTreeMap::new()),
            Err(TemplateError::UnresolvedPlaceholder { .. })
        ));
        let t = PromptTemplate::new("z", "What is {T");
        assert!(render_prompt(&t, Mode::Vlm, &slots(&[("T", "x")])).is_err());
    }

    #[test]
    fn explicit_variants() {
        let t = PromptTemplate {
            id: "contain".into(),
            text: "What might {a}/the {T} contain?".into(),
            vlm_text: Some("What might the {T} in the image contain?".into()),
            llm_text: None,
        };
        let s = slots(&[("T", "jar")]);
        assert_eq!(render_prompt(&t, Mode::Vlm, &s).unwrap(), "What might the jar in the image contain?");
        assert_eq!(render_prompt(&t, Mode::Llm, &s).unwrap(), "What might a jar contain?");
        let bad = PromptTemplate { vlm_text: Some("What is {M}?".into()), ..t };
        assert!(bad.validate().is_err());
    }

    fn type_templates(n: usize) -> Vec<PromptTemplate> {
        (0..n).map(|i| PromptTemplate::new(alloc::format!("q{i}"), "What is this?")).collect()
    }

    #[test]
    fn plan_counts() {
        let vlm = BTreeSet::from([Mode::Vlm]);
        let both = BTreeSet::from([Mode::Vlm, Mode::Llm]);
        let views: Vec<u32> = (0..8).collect();
        let p = plan_probes("o", &type_templates(4), &views, &vlm, &BTreeMap::new()).unwrap();
        assert_eq!(p.probes.len(), 32);

        let p = plan_probes("o", &type_templates(1), &[], &BTreeSet::from([Mode::Llm]), &BTreeMap::new())
            .unwrap();
        assert_eq!(p.probes.len(), 1);
        assert_eq!(p.probes[0].view_id, None);

        let p = plan_probes("o", &type_templates(2), &[0, 1, 2], &both, &BTreeMap::new()).unwrap();
        assert_eq!(p.probes.len(), 8);

        assert_eq!(plan_probes("o", &type_templates(1), &[], &vlm, &BTreeMap::new()), Err(PlanError::NoViews));
        assert_eq!(plan_probes("o", &[], &[0], &vlm, &BTreeMap::new()), Err(PlanError::EmptyTemplates));
    }

    #[test]
    fn plan_records_upstream_slots() {
        let t = PromptTemplate::new("m", "What material is {a}/this {T} made of?");
        let p = plan_probes("o", &[t], &[0], &BTreeSet::from([Mode::Vlm]), &slots(&[("T", "spoon")])).unwrap();
        assert_eq!(p.upstream_requirements, BTreeSet::from(["T".to_string()]));
        assert_eq!(p.probes[0].prompt_text, "What material is this spoon made of?");
    }

    fn dist(entries: &[(&str, f64)]) -> AggregateDistribution {
        let mut d = AggregateDistribution {
            object_id: "o".into(),
            property: "type".into(),
            entries: entries
                .iter()
                .map(|(c, p)| crate::model::DistributionEntry {
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

    #[test]
    fn slot_resolution() {
        let mut store = BTreeMap::new();
        store.insert(("o".to_string(), "type".to_string()), dist(&[("ladle", 0.3), ("spoon", 0.7)]));
        store.insert(("t".to_string(), "type".to_string()), dist(&[("b", 0.5), ("a", 0.5)]));
        let m = SlotPolicy::ModeOfDistribution;
        assert_eq!(resolve_slot("o", "type", &store, &m).unwrap(), "spoon");
        assert_eq!(resolve_slot("t", "type", &store, &m).unwrap(), "a");
        assert_eq!(resolve_slot("x", "material", &store, &SlotPolicy::Fixed("wood".into())).unwrap(), "wood");
        assert!(matches!(
            resolve_slot("x", "material", &store, &m),
            Err(SlotError::MissingUpstreamAggregate { .. })
        ));
    }

    fn stage(property: &str, text: &str, deps: &[(&str, &str)]) -> ChainStage {
        ChainStage {
            property: property.into(),
            templates: vec![PromptTemplate::new(alloc::format!("{property}-q"), text)],
            modes: BTreeSet::from([Mode::Vlm]),
            slots: deps
                .iter()
                .map(|(slot, prop)| {
                    (slot.to_string(), SlotBinding { property: prop.to_string(), policy: SlotPolicy::ModeOfDistribution })
                })
                .collect(),
        }
    }

    #[test]
    fn chain_ordering() {
        let ty = stage("type", "What is this?", &[]);
        let mat = stage("material", "What material is {a}/this {T} made of?", &[("T", "type")]);
        let frag = stage("fragility", "Is {a}/this {M} {T} fragile?", &[("T", "type"), ("M", "material")]);
        assert_eq!(chain_order(&[ty.clone(), mat.clone(), frag.clone()]).unwrap(), vec![0, 1, 2]);
        assert_eq!(chain_order(&[frag.clone(), ty.clone(), mat.clone()]).unwrap(), vec![1, 2, 0]);

        let a = stage("a", "{X}?", &[("X", "b")]);
        let b = stage("b", "{Y}?", &[("Y", "a")]);
        assert!(matches!(chain_order(&[a, b]), Err(ChainError::CyclicDependency(_))));

        let unbound = stage("material", "What material is {a}/this {T} made of?", &[]);
        assert!(matches!(chain_order(&[unbound]), Err(ChainError::UnboundSlot { .. })));
        assert!(matches!(chain_order(&[mat]), Err(ChainError::UnknownUpstream { .. })));
        assert!(matches!(
            chain_order(&[ty.clone(), ty]),
            Err(ChainError::DuplicateProperty(_))
        ));
    }
}
