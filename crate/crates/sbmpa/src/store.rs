//! Line-delimited record files.
//!
//! Every line is one JSON object of the form
//! `{"kind": ..., "schema_version": 1, <record fields>}`. A file holds a
//! single kind. Keys are written in declaration order, so writing the same
//! values twice gives byte-identical files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use sbmpa_core::curation::{CurationCandidate, LabelSet, MergeMap};
use sbmpa_core::metrics::{KeywordRule, ObjectEval};
use sbmpa_core::model::check_distribution;
use sbmpa_core::probes::PromptTemplate;
use sbmpa_core::{
    validate_probe_record, AggregateDistribution, CurationDecision, LabelRecord, ProbeRecord,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Tolerance used when validating stored distributions.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// A type stored one-per-line under a fixed kind name.
pub trait Record: Serialize + DeserializeOwned {
    const KIND: &'static str;

    /// Invariants beyond what the schema expresses.
    fn check(&self) -> Result<(), String> {
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {reason}", path.display())]
    Parse { path: PathBuf, line: usize, reason: String },
    #[error("{}:{line}: expected {expected:?} records, found {found:?}", path.display())]
    KindMismatch { path: PathBuf, line: usize, expected: &'static str, found: String },
    #[error("{}: item {index} could not be serialized: {reason}", path.display())]
    Serialization { path: PathBuf, index: usize, reason: String },
    #[error("{}: {reason}", path.display())]
    Invalid { path: PathBuf, reason: String },
}

impl StoreError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        StoreError::Io { path: path.to_path_buf(), source }
    }
}

/// Whether unknown fields are an error or kept as opaque extras.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strictness {
    Strict,
    Lenient,
}

/// A record plus the top-level fields its schema does not know.
#[derive(Debug, Clone, PartialEq)]
pub struct WithExtras<T> {
    pub value: T,
    pub extras: Map<String, Value>,
}

#[derive(Serialize)]
struct Envelope<'a, T> {
    kind: &'static str,
    schema_version: u32,
    #[serde(flatten)]
    record: &'a T,
    #[serde(flatten)]
    extras: &'a Map<String, Value>,
}

/// One serialized line, without the newline.
pub fn encode_line<T: Record>(item: &T) -> Result<String, serde_json::Error> {
    encode_line_with_extras(item, &Map::new())
}

fn encode_line_with_extras<T: Record>(item: &T, extras: &Map<String, Value>) -> Result<String, serde_json::Error> {
    serde_json::to_string(&Envelope { kind: T::KIND, schema_version: SCHEMA_VERSION, record: item, extras })
}

fn write_lines(path: &Path, lines: impl Iterator<Item = String>) -> Result<usize, StoreError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| StoreError::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| StoreError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut n = 0;
    for line in lines {
        out.write_all(line.as_bytes()).and_then(|_| out.write_all(b"\n")).map_err(|e| StoreError::io(path, e))?;
        n += 1;
    }
    let file = out.into_inner().map_err(|e| StoreError::io(path, e.into_error()))?;
    file.sync_all().map_err(|e| StoreError::io(path, e))?;
    Ok(n)
}

/// Writes `items` one per line and syncs the file. Returns the count written.
pub fn write_records<T: Record>(path: &Path, items: &[T]) -> Result<usize, StoreError> {
    let lines = items
        .iter()
        .enumerate()
        .map(|(index, item)| {
            encode_line(item).map_err(|e| StoreError::Serialization {
                path: path.to_path_buf(),
                index,
                reason: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    write_lines(path, lines.into_iter())
}

pub fn write_records_with_extras<T: Record>(path: &Path, items: &[WithExtras<T>]) -> Result<usize, StoreError> {
    let lines = items
        .iter()
        .enumerate()
        .map(|(index, item)| {
            encode_line_with_extras(&item.value, &item.extras).map_err(|e| StoreError::Serialization {
                path: path.to_path_buf(),
                index,
                reason: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    write_lines(path, lines.into_iter())
}

/// Appends one record under an exclusive lock and syncs before returning.
pub fn append_record<T: Record>(path: &Path, item: &T) -> Result<(), StoreError> {
    let mut line = encode_line(item).map_err(|e| StoreError::Serialization {
        path: path.to_path_buf(),
        index: 0,
        reason: e.to_string(),
    })?;
    line.push('\n');
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| StoreError::io(path, e))?;
    file.lock().map_err(|e| StoreError::io(path, e))?;
    let result = file.write_all(line.as_bytes()).and_then(|_| file.sync_all());
    let unlocked = file.unlock();
    result.and(unlocked).map_err(|e| StoreError::io(path, e))
}

fn parse_line<T: Record>(
    path: &Path,
    line_no: usize,
    line: &str,
    strictness: Strictness,
) -> Result<WithExtras<T>, StoreError> {
    let parse_err = |reason: String| StoreError::Parse { path: path.to_path_buf(), line: line_no, reason };
    let value: Value = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
    let Value::Object(mut fields) = value else {
        return Err(parse_err("line is not a JSON object".into()));
    };
    match fields.remove("kind") {
        Some(Value::String(kind)) if kind == T::KIND => {}
        Some(Value::String(kind)) => {
            return Err(StoreError::KindMismatch {
                path: path.to_path_buf(),
                line: line_no,
                expected: T::KIND,
                found: kind,
            })
        }
        _ => return Err(parse_err("missing or non-string \"kind\"".into())),
    }
    match fields.remove("schema_version").as_ref().and_then(Value::as_u64) {
        Some(v) if v == u64::from(SCHEMA_VERSION) => {}
        Some(v) => return Err(parse_err(format!("unsupported schema_version {v}"))),
        None => return Err(parse_err("missing or non-integer \"schema_version\"".into())),
    }
    let mut unknown = Vec::new();
    let mut top_level_unknown = BTreeSet::new();
    let value: T = serde_ignored::deserialize(Value::Object(fields.clone()), |p| {
        if let serde_ignored::Path::Map { parent: serde_ignored::Path::Root, key } = &p {
            top_level_unknown.insert(key.clone());
        }
        unknown.push(p.to_string());
    })
    .map_err(|e| parse_err(e.to_string()))?;
    if strictness == Strictness::Strict && !unknown.is_empty() {
        return Err(parse_err(format!("unknown field(s): {}", unknown.join(", "))));
    }
    value.check().map_err(parse_err)?;
    let extras = fields.into_iter().filter(|(k, _)| top_level_unknown.contains(k)).collect();
    Ok(WithExtras { value, extras })
}

/// Parses record text; `path` is only used in error messages.
pub fn parse_records<T: Record>(
    path: &Path,
    text: &str,
    strictness: Strictness,
) -> Result<Vec<WithExtras<T>>, StoreError> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() {
        return Ok(Vec::new());
    }
    body.split('\n')
        .enumerate()
        .map(|(i, line)| {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() {
                return Err(StoreError::Parse { path: path.to_path_buf(), line: i + 1, reason: "blank line".into() });
            }
            parse_line(path, i + 1, line, strictness)
        })
        .collect()
}

fn read_text(path: &Path) -> Result<String, StoreError> {
    std::fs::read_to_string(path).map_err(|e| StoreError::io(path, e))
}

/// Reads a file in strict mode: unknown fields anywhere are rejected.
pub fn read_records<T: Record>(path: &Path) -> Result<Vec<T>, StoreError> {
    Ok(parse_records(path, &read_text(path)?, Strictness::Strict)?
        .into_iter()
        .map(|r| r.value)
        .collect())
}

/// Reads a file keeping unknown top-level fields as extras.
pub fn read_records_lenient<T: Record>(path: &Path) -> Result<Vec<WithExtras<T>>, StoreError> {
    parse_records(path, &read_text(path)?, Strictness::Lenient)
}

impl Record for ProbeRecord {
    const KIND: &'static str = "probe";

    fn check(&self) -> Result<(), String> {
        let violations = validate_probe_record(self);
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations.join("; "))
        }
    }
}

impl Record for AggregateDistribution {
    const KIND: &'static str = "aggregate";

    fn check(&self) -> Result<(), String> {
        if check_distribution(self, MASS_TOLERANCE) {
            Ok(())
        } else {
            Err(format!("distribution for {:?} is not normalized, sorted and distinct", self.object_id))
        }
    }
}

impl Record for LabelRecord {
    const KIND: &'static str = "label";

    fn check(&self) -> Result<(), String> {
        if self.label.trim().is_empty() {
            Err("label must be non-empty".into())
        } else {
            Ok(())
        }
    }
}

impl Record for CurationDecision {
    const KIND: &'static str = "decision";
}

impl Record for PromptTemplate {
    const KIND: &'static str = "template";

    fn check(&self) -> Result<(), String> {
        self.validate().map_err(|e| e.to_string())
    }
}

impl Record for CurationCandidate {
    const KIND: &'static str = "candidate";
}

impl Record for ObjectEval {
    const KIND: &'static str = "eval";
}

impl Record for KeywordRule {
    const KIND: &'static str = "keyword_rule";
}

/// Baseline captions from some external source for one object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceCaptions {
    pub per_view: Vec<String>,
    pub aggregate: String,
}

/// One object of a dataset: its rendered views and optional side data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestObject {
    pub object_id: String,
    pub view_refs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_captions: Option<BTreeMap<String, SourceCaptions>>,
}

impl Record for ManifestObject {
    const KIND: &'static str = "manifest";

    fn check(&self) -> Result<(), String> {
        if self.object_id.is_empty() {
            Err("object_id must be non-empty".into())
        } else {
            Ok(())
        }
    }
}

/// Objects with unique ids and the same number of views each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub objects: Vec<ManifestObject>,
}

impl Manifest {
    pub fn new(objects: Vec<ManifestObject>) -> Result<Self, String> {
        let mut seen = BTreeSet::new();
        let dups: Vec<&str> = objects
            .iter()
            .filter(|o| !seen.insert(o.object_id.as_str()))
            .map(|o| o.object_id.as_str())
            .collect();
        if !dups.is_empty() {
            return Err(format!("duplicate object ids: {}", dups.join(", ")));
        }
        if let Some(first) = objects.first() {
            let expected = first.view_refs.len();
            let bad: Vec<String> = objects
                .iter()
                .filter(|o| o.view_refs.len() != expected)
                .map(|o| format!("{} ({} views)", o.object_id, o.view_refs.len()))
                .collect();
            if !bad.is_empty() {
                return Err(format!("expected {expected} views per object; differing: {}", bad.join(", ")));
            }
        }
        Ok(Manifest { objects })
    }

    /// Views per object (0 for an empty manifest).
    pub fn view_count(&self) -> usize {
        self.objects.first().map_or(0, |o| o.view_refs.len())
    }

    pub fn get(&self, object_id: &str) -> Option<&ManifestObject> {
        self.objects.iter().find(|o| o.object_id == object_id)
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest, StoreError> {
    Manifest::new(read_records(path)?).map_err(|reason| StoreError::Invalid { path: path.to_path_buf(), reason })
}

/// Reads a JSON object mapping labels to the labels they merge into.
pub fn load_merges(path: &Path) -> Result<MergeMap, StoreError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| StoreError::Invalid { path: path.to_path_buf(), reason: e.to_string() })
}

/// Reads label records, rewrites them through `merges` and checks uniqueness.
pub fn load_label_set(path: &Path, merges: Option<&MergeMap>) -> Result<LabelSet, StoreError> {
    let records = read_records::<LabelRecord>(path)?;
    let empty = MergeMap::empty();
    LabelSet::build(records, merges.unwrap_or(&empty))
        .map_err(|e| StoreError::Invalid { path: path.to_path_buf(), reason: e.to_string() })
}

/// A caption for an object, either for one view or (without `view_id`) for the whole object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub object_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_id: Option<u32>,
    pub text: Option<String>,
}

impl Record for CaptionRecord {
    const KIND: &'static str = "caption";
}

#[derive(Debug, Deserialize)]
struct CsvCaption {
    object_id: String,
    #[serde(default)]
    view_id: Option<u32>,
    #[serde(default)]
    text: Option<String>,
}

/// Imports a third-party caption dump with columns `object_id`, `text` and
/// optionally `view_id`. Only the presence of an object id is validated.
pub fn read_captions_csv(path: &Path) -> Result<Vec<CaptionRecord>, StoreError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| StoreError::Invalid {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<CsvCaption>().enumerate() {
        let row = row.map_err(|e| StoreError::Parse { path: path.to_path_buf(), line: i + 2, reason: e.to_string() })?;
        if row.object_id.trim().is_empty() {
            return Err(StoreError::Parse { path: path.to_path_buf(), line: i + 2, reason: "empty object_id".into() });
        }
        out.push(CaptionRecord {
            object_id: row.object_id,
            view_id: row.view_id,
            text: row.text.filter(|t| !t.is_empty()),
        });
    }
    Ok(out)
}

/// Captions from a record file, or from a CSV dump when the extension is `.csv`.
pub fn load_captions(path: &Path) -> Result<Vec<CaptionRecord>, StoreError> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_captions_csv(path)
    } else {
        read_records(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sbmpa_core::{Mode, ScoredResponse};

    fn probe(object_id: &str) -> ProbeRecord {
        ProbeRecord {
            object_id: object_id.into(),
            view_id: Some(0),
            question_id: "q0".into(),
            prompt_text: "What is this?".into(),
            mode: Mode::Vlm,
            responses: vec![ScoredResponse::new("chair", -0.25), ScoredResponse::new("stool", -1.5)],
            property: None,
            backend_id: Some("stub".into()),
        }
    }

    #[test]
    fn line_layout_is_fixed() {
        let line = encode_line(&probe("o1")).unwrap();
        assert_eq!(
            line,
            r#"{"kind":"probe","schema_version":1,"object_id":"o1","view_id":0,"question_id":"q0","prompt_text":"What is this?","mode":"vlm","responses":[{"text":"chair","score":-0.25},{"text":"stool","score":-1.5}],"backend_id":"stub"}"#
        );
    }

    #[test]
    fn unknown_fields_strict_and_lenient() {
        let line = encode_line(&probe("o1")).unwrap().replacen("\"object_id\"", "\"note\":\"x\",\"object_id\"", 1);
        let p = Path::new("mem");
        let err = parse_records::<ProbeRecord>(p, &line, Strictness::Strict).unwrap_err();
        assert!(matches!(err, StoreError::Parse { line: 1, .. }), "{err}");
        let ok = parse_records::<ProbeRecord>(p, &line, Strictness::Lenient).unwrap();
        assert_eq!(ok[0].extras.get("note"), Some(&Value::String("x".into())));
        assert_eq!(ok[0].value, probe("o1"));
    }

    #[test]
    fn nested_unknown_field_is_strict_error() {
        let line = encode_line(&probe("o1")).unwrap().replacen("\"score\":-0.25", "\"score\":-0.25,\"x\":1", 1);
        assert!(parse_records::<ProbeRecord>(Path::new("mem"), &line, Strictness::Strict).is_err());
    }

    #[test]
    fn invariant_violations_are_parse_errors() {
        let mut bad = probe("o1");
        bad.mode = Mode::Llm;
        let text = format!("{}\n", encode_line(&bad).unwrap());
        let err = parse_records::<ProbeRecord>(Path::new("mem"), &text, Strictness::Strict).unwrap_err();
        assert!(err.to_string().contains("llm mode must not carry view_id"), "{err}");
    }

    #[test]
    fn manifest_view_counts_checked() {
        let obj = |id: &str, n: usize| ManifestObject {
            object_id: id.into(),
            view_refs: (0..n).map(|i| format!("{id}/{i}.png")).collect(),
            tags: None,
            source_captions: None,
        };
        assert!(Manifest::new(vec![obj("a", 8), obj("b", 8)]).is_ok());
        let err = Manifest::new(vec![obj("a", 8), obj("b", 7), obj("c", 6)]).unwrap_err();
        assert!(err.contains("b (7 views)") && err.contains("c (6 views)"), "{err}");
        assert!(Manifest::new(vec![obj("a", 8), obj("a", 8)]).unwrap_err().contains("duplicate"));
    }
}
