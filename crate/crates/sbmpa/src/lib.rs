//! IO, backends, curation service and CLI plumbing around `sbmpa-core`.

pub mod backends;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod service;
pub mod store;
