//! Caption audits: blow-up ratio of summaries and keyword frequencies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use sbmpa_core::metrics::{blow_up_ratio, keyword_audit, word_count, AuditError, KeywordAudit, KeywordRule};

use crate::error::{list_some, RunError};
use crate::store::{CaptionRecord, Record};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowUpRow {
    pub object_id: String,
    pub summary_words: usize,
    pub max_view_words: usize,
    pub ratio: f64,
}

impl Record for BlowUpRow {
    const KIND: &'static str = "blow_up";
}

impl Record for KeywordAudit {
    const KIND: &'static str = "keyword_audit";
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditOutput {
    /// Worst (largest ratio) first; ties by object id.
    pub blow_up: Vec<BlowUpRow>,
    /// Objects in the join whose per-view captions were all empty.
    pub skipped: Vec<String>,
    /// Keyword counts over the summary corpus, when rules were given.
    pub keywords: Option<KeywordAudit>,
}

/// Joins summaries with per-view captions on object id and audits both.
pub fn run_audit(
    summaries: &[CaptionRecord],
    per_view: &[CaptionRecord],
    rules: Option<&[KeywordRule]>,
) -> Result<AuditOutput, RunError> {
    let mut summary_by_object: BTreeMap<&str, Option<&str>> = BTreeMap::new();
    for s in summaries {
        if summary_by_object.insert(&s.object_id, s.text.as_deref()).is_some() {
            return Err(RunError::Config(format!("several summaries for object {}", s.object_id)));
        }
    }
    let mut views_by_object: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for v in per_view {
        views_by_object.entry(&v.object_id).or_default().push(v.text.as_deref().unwrap_or(""));
    }

    let mut blow_up = Vec::new();
    let mut skipped = Vec::new();
    let mut joined = 0;
    for (object_id, summary) in &summary_by_object {
        let (Some(summary), Some(views)) = (summary, views_by_object.get(object_id)) else {
            continue;
        };
        joined += 1;
        match blow_up_ratio(summary, views) {
            Ok(ratio) => blow_up.push(BlowUpRow {
                object_id: object_id.to_string(),
                summary_words: word_count(summary),
                max_view_words: views.iter().map(|v| word_count(v)).max().unwrap_or(0),
                ratio,
            }),
            Err(AuditError::AllCaptionsEmpty) => skipped.push(object_id.to_string()),
            Err(e) => return Err(RunError::Config(e.to_string())),
        }
    }
    if joined == 0 {
        return Err(RunError::Empty("no object has both a summary and per-view captions".into()));
    }
    blow_up.sort_by(|a, b| b.ratio.total_cmp(&a.ratio).then_with(|| a.object_id.cmp(&b.object_id)));

    let keywords = match rules {
        None => None,
        Some(rules) => {
            let corpus: BTreeMap<String, Option<String>> = summary_by_object
                .iter()
                .map(|(o, t)| (o.to_string(), t.map(String::from)))
                .collect();
            Some(keyword_audit(&corpus, rules).map_err(|e| RunError::Empty(e.to_string()))?)
        }
    };
    Ok(AuditOutput { blow_up, skipped, keywords })
}

pub fn format_audit(out: &AuditOutput, top: usize) -> String {
    let mut s = format!("{:<24}{:>8}{:>8}{:>8}\n", "object", "summary", "view", "ratio");
    for r in out.blow_up.iter().take(top) {
        s.push_str(&format!("{:<24}{:>8}{:>8}{:>8.2}\n", r.object_id, r.summary_words, r.max_view_words, r.ratio));
    }
    if !out.skipped.is_empty() {
        s.push_str(&format!("skipped (all view captions empty): {}\n", list_some(&out.skipped, 10)));
    }
    if let Some(k) = &out.keywords {
        s.push_str(&format!("corpus {} captions, {:.2} missing\n", k.total, k.missing_fraction));
        for r in &k.rules {
            s.push_str(&format!("{:<24}{:>8}{:>8.2}\n", r.name, r.count, r.fraction));
        }
    }
    s
}
