//! Score-based multi-probe aggregation.
//!
//! A model is queried several times about one object (different views,
//! different phrasings of the same question). Each query returns a handful
//! of sampled responses with log-likelihood scores. This crate collapses
//! equivalent responses inside a query, reinforces responses that recur
//! across queries with a log-sum-exp, and normalizes the result into a
//! probability distribution over canonical answers. It also carries the
//! metrics used to evaluate those distributions and the prompt machinery
//! used to build and chain the queries.
//!
//! The crate is `no_std` (with `alloc`) so the numerical core has no IO or
//! platform math dependencies; all transcendental functions go through
//! `libm`, which keeps results bit-identical across platforms.
#![cfg_attr(not(test), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod aggregate;
pub mod canon;
pub mod curation;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod probes;
pub mod time;

pub use aggregate::{
    aggregate, combine_queries, dedupe_rescore, support_cap, to_distribution, AggMode,
    AggregateError, CappedDistribution, ProbeFilter, ProvenanceIndex, QueryKey, QueryScoreMap,
};
pub use canon::{canonicalize, CanonError, CanonRuleset, Rule};
pub use model::{
    check_distribution, validate_probe_record, AggregateDistribution, CanonicalScore,
    CurationDecision, Decision, DistributionEntry, LabelRecord, Mode, ProbeRecord, Provenance,
    ScoredResponse,
};
pub use time::Timestamp;
