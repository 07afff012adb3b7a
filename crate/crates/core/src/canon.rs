//! Canonicalization: the string map that decides when two responses are the same answer.
//!
//! A [`CanonRuleset`] is an ordered list of string-reduction rules. Applying
//! it runs the rules in order and then repeats the whole pass until the
//! output stops changing, so every ruleset is idempotent by construction.

use alloc::borrow::ToOwned;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

/// Maximum number of extra passes spent looking for a fixpoint.
pub const MAX_FIXPOINT_PASSES: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rule {
    Lowercase,
    TrimWhitespace,
    StripTerminalPunctuation,
    CollapseInternalWhitespace,
    /// Removes the first matching literal prefix (word-anchored), then leading whitespace.
    StripPrefix(Vec<String>),
    /// Removes the first matching suffix phrase together with a preceding comma/space.
    StripSuffix(Vec<String>),
    /// Keeps the text before the first comma.
    FirstCommaTerm,
    /// Literal substring replacements, applied in order.
    Replace(Vec<(String, String)>),
}

impl Rule {
    pub fn name(&self) -> &'static str {
        match self {
            Rule::Lowercase => "lowercase",
            Rule::TrimWhitespace => "trim_whitespace",
            Rule::StripTerminalPunctuation => "strip_terminal_punctuation",
            Rule::CollapseInternalWhitespace => "collapse_internal_whitespace",
            Rule::StripPrefix(_) => "strip_prefix",
            Rule::StripSuffix(_) => "strip_suffix",
            Rule::FirstCommaTerm => "first_comma_term",
            Rule::Replace(_) => "replace",
        }
    }

    pub fn apply(&self, text: &str) -> String {
        match self {
            Rule::Lowercase => lowercase(text),
            Rule::TrimWhitespace => text.trim().to_string(),
            Rule::StripTerminalPunctuation => strip_terminal_punctuation(text).to_string(),
            Rule::CollapseInternalWhitespace => {
                let mut out = String::with_capacity(text.len());
                let mut in_space = false;
                for c in text.chars() {
                    if c.is_whitespace() {
                        if !in_space {
                            out.push(' ');
                        }
                        in_space = true;
                    } else {
                        out.push(c);
                        in_space = false;
                    }
                }
                out
            }
            Rule::StripPrefix(prefixes) => {
                for p in prefixes {
                    if let Some(rest) = text.strip_prefix(p.as_str()) {
                        let anchored = rest.chars().next().is_none_or(|c| !c.is_alphanumeric());
                        if anchored && !p.is_empty() {
                            return rest.trim_start().to_string();
                        }
                    }
                }
                text.to_string()
            }
            Rule::StripSuffix(patterns) => strip_suffix(text, patterns),
            Rule::FirstCommaTerm => match text.split_once(',') {
                Some((head, _)) => head.trim().to_string(),
                None => text.to_string(),
            },
            Rule::Replace(pairs) => {
                let mut out = text.to_string();
                for (from, to) in pairs {
                    if !from.is_empty() {
                        out = out.replace(from.as_str(), to);
                    }
                }
                out
            }
        }
    }
}

/// Unicode lowercasing restricted to single-code-point results (simple case mapping).
fn lowercase(text: &str) -> String {
    text.chars()
        .map(|c| c.to_lowercase().next().unwrap_or(c))
        .collect()
}

const TERMINAL_PUNCTUATION: &[char] = &['.', '!', '?', ',', ';', ':', '\u{3002}'];

fn strip_terminal_punctuation(text: &str) -> &str {
    text.trim_end_matches(|c: char| TERMINAL_PUNCTUATION.contains(&c) || c.is_whitespace())
}

fn strip_suffix(text: &str, patterns: &[String]) -> String {
    let folded = lowercase(text);
    for p in patterns {
        let p = lowercase(p);
        if p.is_empty() || !folded.ends_with(p.as_str()) {
            continue;
        }
        let cut = folded.len() - p.len();
        // Anchor: the phrase must start the string or follow a space or comma.
        let before = &folded[..cut];
        if !(before.is_empty() || before.ends_with(|c: char| c.is_whitespace() || c == ',')) {
            continue;
        }
        // Lowercasing is length-preserving only for most scripts; fall back to
        // counting characters when byte offsets disagree.
        let head = if folded.len() == text.len() {
            &text[..cut]
        } else {
            let keep = folded[..cut].chars().count();
            let end = text.char_indices().nth(keep).map_or(text.len(), |(i, _)| i);
            &text[..end]
        };
        return head
            .trim_end_matches(|c: char| c.is_whitespace() || c == ',')
            .to_string();
    }
    text.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CanonError {
    #[error("ruleset {ruleset:?} did not reach a fixpoint on {input:?} within {MAX_FIXPOINT_PASSES} passes")]
    RulesetDivergent { ruleset: String, input: String },
    #[error("unknown ruleset {0:?} (built-ins: caption, vqa-first-term, cap3d-compare, identity)")]
    UnknownRuleset(String),
    #[error("malformed ruleset file at line {line}, column {column}: {reason}")]
    MalformedRulesetFile { line: usize, column: usize, reason: String },
}

/// An ordered, named list of rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonRuleset {
    pub name: String,
    pub version: u32,
    pub rules: Vec<Rule>,
}

/// Names of the built-in rulesets.
pub const BUILTIN_RULESETS: [&str; 4] = ["caption", "vqa-first-term", "cap3d-compare", "identity"];

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| (*s).to_owned()).collect()
}

impl CanonRuleset {
    pub fn new(name: impl Into<String>, rules: Vec<Rule>) -> Self {
        CanonRuleset { name: name.into(), version: 1, rules }
    }

    pub fn identity() -> Self {
        CanonRuleset::new("identity", Vec::new())
    }

    /// Captions: drop the "on/against a white background" tail.
    pub fn caption() -> Self {
        CanonRuleset::new(
            "caption",
            alloc::vec![
                Rule::Lowercase,
                Rule::TrimWhitespace,
                Rule::CollapseInternalWhitespace,
                Rule::StripTerminalPunctuation,
                Rule::StripSuffix(strings(&[
                    "on a white background",
                    "against a white background",
                ])),
            ],
        )
    }

    /// VQA answers given as comma-separated synonym lists: keep the first term.
    pub fn vqa_first_term() -> Self {
        CanonRuleset::new(
            "vqa-first-term",
            alloc::vec![
                Rule::Lowercase,
                Rule::TrimWhitespace,
                Rule::StripTerminalPunctuation,
                Rule::FirstCommaTerm,
            ],
        )
    }

    /// Third-party captions with the "3D model of" lead-in removed.
    pub fn cap3d_compare() -> Self {
        CanonRuleset::new(
            "cap3d-compare",
            alloc::vec![
                Rule::Lowercase,
                Rule::TrimWhitespace,
                Rule::StripPrefix(strings(&["3d model of"])),
                Rule::StripTerminalPunctuation,
            ],
        )
    }

    pub fn builtin(name: &str) -> Result<Self, CanonError> {
        match name {
            "identity" => Ok(Self::identity()),
            "caption" => Ok(Self::caption()),
            "vqa-first-term" => Ok(Self::vqa_first_term()),
            "cap3d-compare" => Ok(Self::cap3d_compare()),
            other => Err(CanonError::UnknownRuleset(other.to_string())),
        }
    }

    fn apply_once(&self, text: &str) -> String {
        let mut cur = text.to_string();
        for rule in &self.rules {
            cur = rule.apply(&cur);
        }
        cur
    }

    /// Parses the one-rule-per-line config format.
    ///
    /// ```text
    /// # comments and blank lines are ignored
    /// lowercase
    /// strip_suffix: on a white background, against a white background
    /// replace: metallic=metal, aluminium=aluminum
    /// ```
    pub fn parse(name: &str, source: &str) -> Result<Self, CanonError> {
        let mut rules = Vec::new();
        for (idx, raw) in source.lines().enumerate() {
            let line_no = idx + 1;
            let content = raw.split('#').next().unwrap_or("");
            if content.trim().is_empty() {
                continue;
            }
            let column = content.len() - content.trim_start().len() + 1;
            let malformed = |column: usize, reason: String| CanonError::MalformedRulesetFile {
                line: line_no,
                column,
                reason,
            };
            let (rule_name, args) = match content.split_once(':') {
                Some((n, a)) => (n.trim(), Some(a)),
                None => (content.trim(), None),
            };
            let arg_column = column + content.trim_start().find(':').map_or(0, |i| i + 1);
            let list = |args: Option<&str>| -> Result<Vec<String>, CanonError> {
                let items: Vec<String> = args
                    .unwrap_or("")
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                if items.is_empty() {
                    return Err(malformed(arg_column, alloc::format!("{rule_name} needs arguments")));
                }
                Ok(items)
            };
            let no_args = |rule: Rule| -> Result<Rule, CanonError> {
                match args {
                    Some(a) if !a.trim().is_empty() => Err(malformed(
                        arg_column,
                        alloc::format!("{rule_name} takes no arguments"),
                    )),
                    _ => Ok(rule),
                }
            };
            let rule = match rule_name {
                "lowercase" => no_args(Rule::Lowercase)?,
                "trim_whitespace" | "trim" => no_args(Rule::TrimWhitespace)?,
                "strip_terminal_punctuation" => no_args(Rule::StripTerminalPunctuation)?,
                "collapse_internal_whitespace" => no_args(Rule::CollapseInternalWhitespace)?,
                "first_comma_term" => no_args(Rule::FirstCommaTerm)?,
                "strip_prefix" => Rule::StripPrefix(list(args)?),
                "strip_suffix" => Rule::StripSuffix(list(args)?),
                "replace" => {
                    let mut pairs = Vec::new();
                    for item in list(args)? {
                        let Some((from, to)) = item.split_once('=') else {
                            return Err(malformed(
                                arg_column,
                                alloc::format!("replace argument {item:?} is not from=to"),
                            ));
                        };
                        if from.trim().is_empty() {
                            return Err(malformed(arg_column, "replace source is empty".to_string()));
                        }
                        pairs.push((from.trim().to_string(), to.trim().to_string()));
                    }
                    Rule::Replace(pairs)
                }
                other => return Err(malformed(column, alloc::format!("unknown rule {other:?}"))),
            };
            rules.push(rule);
        }
        Ok(CanonRuleset::new(name, rules))
    }
}

impl fmt::Display for CanonRuleset {
    /// Renders the ruleset in the config-file format accepted by [`CanonRuleset::parse`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for rule in &self.rules {
            f.write_str(rule.name())?;
            match rule {
                Rule::StripPrefix(items) | Rule::StripSuffix(items) => {
                    write!(f, ": {}", items.join(", "))?;
                }
                Rule::Replace(pairs) => {
                    f.write_str(":")?;
                    for (i, (from, to)) in pairs.iter().enumerate() {
                        write!(f, "{}{from}={to}", if i == 0 { " " } else { ", " })?;
                    }
                }
                _ => {}
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Reduces `text` to its canonical form under `ruleset`.
///
/// The result may be empty; callers decide what an empty canonical means.
pub fn canonicalize(text: &str, ruleset: &CanonRuleset) -> Result<String, CanonError> {
    let mut cur = ruleset.apply_once(text);
    for _ in 0..MAX_FIXPOINT_PASSES {
        let next = ruleset.apply_once(&cur);
        if next == cur {
            return Ok(cur);
        }
        cur = next;
    }
    Err(CanonError::RulesetDivergent { ruleset: ruleset.name.clone(), input: text.to_string() })
}
