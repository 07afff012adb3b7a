//! Backend, embedder and run configuration files (TOML).
//!
//! Backend file keys:
//!
//! ```toml
//! kind = "stub"          # stub | replay | live
//! seed = 0               # stub only
//! fixtures = "replay.jsonl"   # replay only; relative to this file
//! strict = true          # replay misses are fatal
//! num_candidates = 5
//! max_in_flight = 8
//!
//! [live]                 # live only
//! base_url = "http://localhost:8000/generate"
//! api_key = "..."        # optional
//! timeout_ms = 30000
//! ```
//!
//! `BASE_URL`, `API_KEY` and `TIMEOUT_MS` in the environment override the
//! `[live]` values. A backend can also be named inline: `stub`, `stub:7`,
//! or `replay:PATH`.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use sbmpa_core::metrics::{EmbeddingProvider, Matcher, TopK};
use sbmpa_core::{AggMode, CanonRuleset, ProbeFilter};

use crate::backends::{
    BackendError, FixtureEmbedder, LiveConfig, LiveEmbedder, LiveEmbedderConfig, LiveGenerator, ReplayGenerator,
    ScoredGenerator, StubGenerator,
};
use crate::store::{read_records, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{}: {reason}", path.display())]
    File { path: PathBuf, reason: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Parses TOML, rejecting keys the schema does not know.
pub fn parse_toml<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T, ConfigError> {
    let file_err = |reason: String| ConfigError::File { path: path.to_path_buf(), reason };
    let value: toml::Value = toml::from_str(text).map_err(|e| file_err(e.to_string()))?;
    let mut unknown = Vec::new();
    let parsed = serde_ignored::deserialize(value, |p| unknown.push(p.to_string())).map_err(|e| file_err(e.to_string()))?;
    if !unknown.is_empty() {
        return Err(file_err(format!("unknown key(s): {}", unknown.join(", "))));
    }
    Ok(parsed)
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::File { path: path.to_path_buf(), reason: e.to_string() })?;
    parse_toml(path, &text)
}

fn resolve(base: Option<&Path>, p: &Path) -> PathBuf {
    match base {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

fn env_var(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Stub,
    Replay,
    Live,
}

fn default_true() -> bool {
    true
}

pub const DEFAULT_NUM_CANDIDATES: usize = 5;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

fn default_num_candidates() -> usize {
    DEFAULT_NUM_CANDIDATES
}

fn default_max_in_flight() -> usize {
    DEFAULT_MAX_IN_FLIGHT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub strict: bool,
    #[serde(default = "default_num_candidates")]
    pub num_candidates: usize,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub live: Option<LiveConfig>,
}

impl BackendConfig {
    pub fn stub(seed: u64) -> Self {
        BackendConfig {
            kind: BackendKind::Stub,
            seed,
            fixtures: None,
            strict: true,
            num_candidates: DEFAULT_NUM_CANDIDATES,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            live: None,
        }
    }

    pub fn replay(fixtures: PathBuf) -> Self {
        BackendConfig { kind: BackendKind::Replay, fixtures: Some(fixtures), ..BackendConfig::stub(0) }
    }

    /// `stub`, `stub:SEED`, `replay:PATH`, or a path to a TOML file.
    pub fn load(spec: &str) -> Result<Self, ConfigError> {
        if spec == "stub" {
            return Ok(BackendConfig::stub(0));
        }
        if let Some(seed) = spec.strip_prefix("stub:") {
            let seed = seed.parse().map_err(|_| ConfigError::Invalid(format!("bad stub seed {seed:?}")))?;
            return Ok(BackendConfig::stub(seed));
        }
        if let Some(path) = spec.strip_prefix("replay:") {
            return Ok(BackendConfig::replay(PathBuf::from(path)));
        }
        let path = Path::new(spec);
        let mut config: BackendConfig = read_toml(path)?;
        if let Some(f) = &config.fixtures {
            config.fixtures = Some(resolve(path.parent(), f));
        }
        Ok(config)
    }

    /// Checks the settings and constructs the generator.
    pub fn build(&self) -> Result<Box<dyn ScoredGenerator>, ConfigError> {
        if self.num_candidates == 0 {
            return Err(ConfigError::Invalid("num_candidates must be at least 1".into()));
        }
        if self.max_in_flight == 0 {
            return Err(ConfigError::Invalid("max_in_flight must be at least 1".into()));
        }
        match self.kind {
            BackendKind::Stub => Ok(Box::new(StubGenerator::new(self.seed))),
            BackendKind::Replay => {
                let path = self
                    .fixtures
                    .as_deref()
                    .ok_or_else(|| ConfigError::Invalid("replay backend needs `fixtures`".into()))?;
                let generator = ReplayGenerator::new(read_records(path)?).map_err(ConfigError::Invalid)?;
                Ok(Box::new(generator))
            }
            BackendKind::Live => {
                let mut live = self
                    .live
                    .clone()
                    .ok_or_else(|| ConfigError::Invalid("live backend needs a [live] table".into()))?;
                live.http.apply_env(env_var).map_err(ConfigError::Invalid)?;
                if live.http.base_url.is_empty() {
                    return Err(ConfigError::Invalid("live backend needs base_url (or BASE_URL)".into()));
                }
                Ok(Box::new(LiveGenerator::new(live)))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Fixture,
    Live,
}

/// Embedder file: `kind = "fixture"` with `fixtures = PATH`, or `kind = "live"` with a `[live]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
    #[serde(default)]
    pub live: Option<LiveEmbedderConfig>,
}

pub type Embedder = Box<dyn EmbeddingProvider<Error = BackendError> + Send + Sync>;

impl EmbedderConfig {
    /// `fixture:PATH` or a path to a TOML file.
    pub fn load(spec: &str) -> Result<Self, ConfigError> {
        if let Some(path) = spec.strip_prefix("fixture:") {
            return Ok(EmbedderConfig { kind: EmbedderKind::Fixture, fixtures: Some(path.into()), live: None });
        }
        let path = Path::new(spec);
        let mut config: EmbedderConfig = read_toml(path)?;
        if let Some(f) = &config.fixtures {
            config.fixtures = Some(resolve(path.parent(), f));
        }
        Ok(config)
    }

    pub fn build(&self) -> Result<Embedder, ConfigError> {
        match self.kind {
            EmbedderKind::Fixture => {
                let path = self
                    .fixtures
                    .as_deref()
                    .ok_or_else(|| ConfigError::Invalid("fixture embedder needs `fixtures`".into()))?;
                Ok(Box::new(FixtureEmbedder::new(read_records(path)?).map_err(ConfigError::Invalid)?))
            }
            EmbedderKind::Live => {
                let mut live = self
                    .live
                    .clone()
                    .ok_or_else(|| ConfigError::Invalid("live embedder needs a [live] table".into()))?;
                live.http.apply_env(env_var).map_err(ConfigError::Invalid)?;
                if live.dimension == 0 {
                    return Err(ConfigError::Invalid("live embedder dimension must be positive".into()));
                }
                Ok(Box::new(LiveEmbedder::new(live)))
            }
        }
    }
}

/// Defaults for command flags, read from `--config`. Flags win over the file.
///
/// ```toml
/// backend = "stub:0"
/// embedder = "fixture:embeddings.jsonl"
/// ruleset = "vqa-first-term"
/// mode = "lse"
/// filter = "views=0,1;mode=vlm"
/// matcher = "lvis"
/// k = 5
/// num_candidates = 5
/// max_in_flight = 8
/// seed = 0
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunDefaults {
    pub backend: Option<String>,
    pub embedder: Option<String>,
    pub ruleset: Option<String>,
    pub mode: Option<String>,
    pub filter: Option<String>,
    pub matcher: Option<String>,
    pub k: Option<usize>,
    pub num_candidates: Option<usize>,
    pub max_in_flight: Option<usize>,
    pub seed: Option<u64>,
}

impl RunDefaults {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        read_toml(path)
    }
}

/// A built-in ruleset name or a ruleset file.
pub fn load_ruleset(name_or_path: &str) -> Result<CanonRuleset, ConfigError> {
    match CanonRuleset::builtin(name_or_path) {
        Ok(r) => Ok(r),
        Err(_) => {
            let path = Path::new(name_or_path);
            if !path.is_file() {
                return Err(ConfigError::Invalid(format!(
                    "unknown ruleset {name_or_path:?}: not a built-in ({}) and not a readable file",
                    sbmpa_core::canon::BUILTIN_RULESETS.join(", ")
                )));
            }
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError::File { path: path.to_path_buf(), reason: e.to_string() })?;
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or(name_or_path);
            CanonRuleset::parse(name, &text).map_err(|e| ConfigError::File { path: path.to_path_buf(), reason: e.to_string() })
        }
    }
}

pub fn parse_mode(s: &str) -> Result<AggMode, ConfigError> {
    s.parse().map_err(|e: String| ConfigError::Invalid(e))
}

pub fn parse_filter(s: &str) -> Result<ProbeFilter, ConfigError> {
    s.parse().map_err(|e| ConfigError::Invalid(format!("bad filter {s:?}: {e}")))
}

pub fn parse_matcher(s: &str) -> Result<Matcher, ConfigError> {
    s.parse().map_err(|e| ConfigError::Invalid(format!("bad matcher {s:?}: {e}")))
}

pub fn parse_top_k(k: usize) -> Result<TopK, ConfigError> {
    TopK::new(k).ok_or_else(|| ConfigError::Invalid("k must be at least 1".into()))
}
