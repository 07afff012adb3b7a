//! Failure classes of a command run and their exit codes.

use crate::config::ConfigError;
use crate::store::StoreError;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_BACKEND: u8 = 3;
pub const EXIT_IO: u8 = 4;
pub const EXIT_EMPTY: u8 = 5;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("nothing to do: {0}")]
    Empty(String),
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            RunError::Backend(_) => EXIT_BACKEND,
            RunError::Store(_) => EXIT_IO,
            RunError::Empty(_) => EXIT_EMPTY,
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        match e {
            // A record file that a config points at failed to load: still a config problem.
            ConfigError::Store(s) => RunError::Config(s.to_string()),
            other => RunError::Config(other.to_string()),
        }
    }
}

/// Lists up to `max` items and says how many more there were.
pub(crate) fn list_some(items: &[String], max: usize) -> String {
    let mut s = items.iter().take(max).cloned().collect::<Vec<_>>().join(", ");
    if items.len() > max {
        s.push_str(&format!(" (and {} more)", items.len() - max));
    }
    s
}
