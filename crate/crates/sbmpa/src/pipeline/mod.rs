//! The end-to-end workflows behind each command, as library functions.

pub mod ablate;
pub mod aggregate;
pub mod audit;
pub mod chain;
pub mod eval;
pub mod probe;

use std::path::{Path, PathBuf};

/// `dir/name.jsonl` -> `dir/name.<tag>.jsonl`, for companion outputs of one report.
pub fn sibling(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("jsonl");
    path.with_file_name(format!("{stem}.{tag}.{ext}"))
}
