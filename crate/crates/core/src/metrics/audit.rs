//! Caption audits: blow-up ratio of text summaries and keyword frequency counts.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Number of maximal runs of non-whitespace characters.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum AuditError {
    #[error("every per-view caption is empty")]
    AllCaptionsEmpty,
    #[error("corpus is empty")]
    EmptyCorpus,
}

/// Summary word count over the longest per-view caption's word count.
///
/// A summary that is itself one of the per-view captions can never exceed 1.0;
/// values well above 1.0 mean the summary added words no single view supplied.
pub fn blow_up_ratio<S: AsRef<str>>(summary: &str, per_view_captions: &[S]) -> Result<f64, AuditError> {
    let longest = per_view_captions
        .iter()
        .map(|c| word_count(c.as_ref()))
        .max()
        .unwrap_or(0);
    if longest == 0 {
        return Err(AuditError::AllCaptionsEmpty);
    }
    Ok(word_count(summary) as f64 / longest as f64)
}

/// Counts captions containing any keyword and none of the exclusions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordRule {
    pub name: String,
    pub keywords: Vec<String>,
    #[serde(default)]
    pub case_sensitive: bool,
    #[serde(default)]
    pub exclusions: Vec<String>,
}

impl KeywordRule {
    pub fn matches(&self, caption: &str) -> bool {
        let fold = |s: &str| -> String {
            if self.case_sensitive {
                s.into()
            } else {
                s.chars().flat_map(char::to_lowercase).collect()
            }
        };
        let text = fold(caption);
        let hit = self.keywords.iter().any(|k| !k.is_empty() && text.contains(fold(k).as_str()));
        hit && !self.exclusions.iter().any(|x| !x.is_empty() && text.contains(fold(x).as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleCount {
    pub name: String,
    pub count: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordAudit {
    pub total: usize,
    pub missing: usize,
    pub missing_fraction: f64,
    pub rules: Vec<RuleCount>,
}

/// Fraction of the whole corpus matched by each rule.
///
/// Missing or blank captions count toward the total but never match.
pub fn keyword_audit(
    captions: &BTreeMap<String, Option<String>>,
    rules: &[KeywordRule],
) -> Result<KeywordAudit, AuditError> {
    let total = captions.len();
    if total == 0 {
        return Err(AuditError::EmptyCorpus);
    }
    let present: Vec<&str> = captions
        .values()
        .filter_map(|c| c.as_deref())
        .filter(|c| !c.trim().is_empty())
        .collect();
    let missing = total - present.len();
    let rules = rules
        .iter()
        .map(|rule| {
            let count = present.iter().filter(|c| rule.matches(c)).count();
            RuleCount { name: rule.name.clone(), count, fraction: count as f64 / total as f64 }
        })
        .collect();
    Ok(KeywordAudit { total, missing, missing_fraction: missing as f64 / total as f64, rules })
}
