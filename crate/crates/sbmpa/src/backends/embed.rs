//! Text embedders: a committed lookup table and a remote encoder.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use sbmpa_core::metrics::{Embedding, EmbeddingProvider};

use super::live::{lookup, HttpClient, HttpSettings};
use super::BackendError;
use crate::store::Record;

/// One row of an embedding table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingFixture {
    pub text: String,
    pub vector: Vec<f64>,
}

impl Record for EmbeddingFixture {
    const KIND: &'static str = "embedding_fixture";

    fn check(&self) -> Result<(), String> {
        if self.vector.is_empty() {
            return Err("vector must be non-empty".into());
        }
        if self.vector.iter().any(|x| !x.is_finite()) {
            return Err("vector components must be finite".into());
        }
        Ok(())
    }
}

/// Looks texts up in a fixed table; unknown texts are an error, never a default vector.
#[derive(Debug, Clone)]
pub struct FixtureEmbedder {
    table: BTreeMap<String, Vec<f64>>,
    unit_norm: bool,
}

impl FixtureEmbedder {
    pub fn new(rows: Vec<EmbeddingFixture>) -> Result<Self, String> {
        let mut dimension = None;
        let mut table = BTreeMap::new();
        for row in rows {
            match dimension {
                None => dimension = Some(row.vector.len()),
                Some(d) if d != row.vector.len() => {
                    return Err(format!("embedding for {:?} has dimension {} (expected {d})", row.text, row.vector.len()))
                }
                Some(_) => {}
            }
            if table.insert(row.text.clone(), row.vector).is_some() {
                return Err(format!("duplicate embedding for {:?}", row.text));
            }
        }
        let unit_norm = table
            .values()
            .all(|v| (v.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-9);
        let unit_norm = unit_norm && !table.is_empty();
        Ok(FixtureEmbedder { table, unit_norm })
    }

    pub fn dimension(&self) -> Option<usize> {
        self.table.values().next().map(Vec::len)
    }
}

impl EmbeddingProvider for FixtureEmbedder {
    type Error = BackendError;

    fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        self.table
            .get(text)
            .map(|v| Embedding::new(v.clone()))
            .ok_or_else(|| BackendError::EmbedderMiss(text.to_string()))
    }

    fn unit_norm(&self) -> bool {
        self.unit_norm
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiveEmbedderConfig {
    #[serde(flatten)]
    pub http: HttpSettings,
    pub dimension: usize,
    #[serde(default)]
    pub unit_norm: bool,
    #[serde(default = "default_text_field")]
    pub text_field: String,
    #[serde(default = "default_vector_path")]
    pub vector_path: String,
}

fn default_text_field() -> String {
    "text".into()
}

fn default_vector_path() -> String {
    "embedding".into()
}

impl LiveEmbedderConfig {
    pub fn new(http: HttpSettings, dimension: usize) -> Self {
        LiveEmbedderConfig {
            http,
            dimension,
            unit_norm: false,
            text_field: default_text_field(),
            vector_path: default_vector_path(),
        }
    }
}

/// Remote encoder: `POST {text}` answered by `{embedding: [...]}` of a declared dimension.
pub struct LiveEmbedder {
    config: LiveEmbedderConfig,
    client: HttpClient,
}

impl LiveEmbedder {
    pub fn new(config: LiveEmbedderConfig) -> Self {
        let client = HttpClient::new(config.http.clone());
        LiveEmbedder { config, client }
    }
}

impl EmbeddingProvider for LiveEmbedder {
    type Error = BackendError;

    fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        if text.is_empty() {
            return Err(BackendError::InvalidRequest("cannot embed empty text".into()));
        }
        let mut body = Map::new();
        body.insert(self.config.text_field.clone(), Value::String(text.to_string()));
        let response = self.client.post_json(&Value::Object(body))?;
        let vector: Vec<f64> = lookup(&response, &self.config.vector_path)
            .and_then(Value::as_array)
            .and_then(|a| a.iter().map(Value::as_f64).collect())
            .ok_or_else(|| {
                BackendError::ProtocolError(format!("no numeric vector at {:?}", self.config.vector_path))
            })?;
        if vector.len() != self.config.dimension {
            return Err(BackendError::ProtocolError(format!(
                "dimension mismatch: expected {}, got {}",
                self.config.dimension,
                vector.len()
            )));
        }
        Ok(Embedding::new(vector))
    }

    fn unit_norm(&self) -> bool {
        self.config.unit_norm
    }
}
