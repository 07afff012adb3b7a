//! Reference implementations in 256-bit binary floating point, written from
//! the definitions with no max-shifting or compensated sums.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rug::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Big = Float;

pub const PRECISION: u32 = 256;

pub fn big(x: f64) -> Big {
    assert!(x.is_finite());
    Float::with_val(PRECISION, x)
}

pub fn to_f64(x: &Big) -> f64 {
    x.to_f64()
}

/// One query: (canonical response, score) pairs, possibly with repeats.
pub type Query = Vec<(String, f64)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combine {
    LogSumExp,
    Max,
}

/// Aggregate scores and probabilities for already-canonical responses.
pub fn aggregate(queries: &[Query], combine: Combine) -> BTreeMap<String, (f64, f64)> {
    // Best score of each response inside a query.
    let per_query: Vec<BTreeMap<&str, f64>> = queries
        .iter()
        .map(|q| {
            let mut m: BTreeMap<&str, f64> = BTreeMap::new();
            for (r, s) in q {
                let e = m.entry(r.as_str()).or_insert(*s);
                if *s > *e {
                    *e = *s;
                }
            }
            m
        })
        .collect();
    let mut combined: BTreeMap<&str, Big> = BTreeMap::new();
    let mut seen: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for m in &per_query {
        for (r, s) in m {
            seen.entry(r).or_default().push(*s);
        }
    }
    for (r, scores) in &seen {
        let v = match combine {
            Combine::LogSumExp => {
                let mut sum = big(0.0);
                for s in scores {
                    sum += big(*s).exp();
                }
                sum.ln()
            }
            Combine::Max => big(scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        };
        combined.insert(r, v);
    }
    let mut z = big(0.0);
    for v in combined.values() {
        z += v.clone().exp();
    }
    combined
        .iter()
        .map(|(r, v)| (r.to_string(), (to_f64(v), to_f64(&(v.clone().exp() / &z)))))
        .collect()
}

pub fn hellinger(p: &BTreeMap<String, f64>, q: &BTreeMap<String, f64>) -> f64 {
    let mut keys: Vec<&String> = p.keys().chain(q.keys()).collect();
    keys.sort();
    keys.dedup();
    let mut acc = big(0.0);
    for k in keys {
        let a = big(p.get(k).copied().unwrap_or(0.0)).sqrt();
        let b = big(q.get(k).copied().unwrap_or(0.0)).sqrt();
        let d = a - b;
        acc += d.square();
    }
    to_f64(&(acc / 2u32).sqrt())
}

/// Slope, intercept and Pearson r from the textbook sums.
pub fn ols(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = big(points.len() as f64);
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (big(0.0), big(0.0), big(0.0), big(0.0), big(0.0));
    for &(x, y) in points {
        let (x, y) = (big(x), big(y));
        sxx += x.clone() * &x;
        syy += y.clone() * &y;
        sxy += x.clone() * &y;
        sx += x;
        sy += y;
    }
    let cov = n.clone() * &sxy - sx.clone() * &sy;
    let vx = n.clone() * &sxx - sx.clone() * &sx;
    let vy = n.clone() * &syy - sy.clone() * &sy;
    let slope = cov.clone() / &vx;
    let intercept = (sy - slope.clone() * &sx) / &n;
    let r = cov / (vx * vy).sqrt();
    (to_f64(&slope), to_f64(&intercept), to_f64(&r))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random instance: up to `max_queries` queries of up to `max_per_query`
/// responses drawn from a small vocabulary so that collisions are common.
pub fn random_queries(rng: &mut ChaCha8Rng, max_queries: usize, max_per_query: usize) -> Vec<Query> {
    let vocab = rng.random_range(1..=12usize);
    let n = rng.random_range(1..=max_queries);
    (0..n)
        .map(|_| {
            let j = rng.random_range(1..=max_per_query);
            (0..j)
                .map(|_| (format!("r{}", rng.random_range(0..vocab)), rng.random_range(-20.0..=0.0)))
                .collect()
        })
        .collect()
}

/// A random distribution over `r0..r{support}` (some entries may be absent).
pub fn random_distribution(rng: &mut ChaCha8Rng, max_support: usize) -> BTreeMap<String, f64> {
    let support = rng.random_range(1..=max_support);
    let mut weights: Vec<(String, f64)> = Vec::new();
    for i in 0..support {
        let w: f64 = rng.random_range(0.0..1.0);
        if rng.random_bool(0.7) && w > 0.0 {
            weights.push((format!("r{i}"), w));
        }
    }
    if weights.is_empty() {
        weights.push(("r0".into(), 1.0));
    }
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    weights.into_iter().map(|(k, w)| (k, w / total)).collect()
}

/// Entries ranked from scratch: probability, then score, both descending, then name.
pub fn ranking(dist: &sbmpa_core::AggregateDistribution) -> Vec<(String, f64)> {
    let mut entries: Vec<(String, f64, f64)> =
        dist.entries.iter().map(|e| (e.canonical.clone(), e.prob, e.agg_score)).collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.2.total_cmp(&a.2)).then(a.0.cmp(&b.0)));
    entries.into_iter().map(|(c, p, _)| (c, p)).collect()
}

pub fn top_k(dist: &sbmpa_core::AggregateDistribution, label: &str, k: usize) -> bool {
    ranking(dist).iter().take(k).any(|(c, _)| c == label)
}

pub fn soft(dist: &sbmpa_core::AggregateDistribution, label: &str) -> f64 {
    ranking(dist).iter().filter(|(c, _)| c == label).map(|(_, p)| *p).sum()
}

/// Cosine of two integer-valued vectors, correctly rounded.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot = |x: &[f64], y: &[f64]| {
        let mut acc = big(0.0);
        for (p, q) in x.iter().zip(y) {
            acc += big(*p) * big(*q);
        }
        acc
    };
    to_f64(&(dot(a, b) / (dot(a, a) * dot(b, b)).sqrt()))
}

/// Twenty labelled objects with random distributions over a small vocabulary.
/// Some labels are absent from their object's support.
pub fn labeled_fixture(seed: u64) -> Vec<(sbmpa_core::AggregateDistribution, sbmpa_core::LabelRecord)> {
    const VOCAB: [&str; 8] = ["chair", "table", "lamp", "sword", "vase", "mug", "spoon", "bowl"];
    let mut rng = rng(seed);
    (0..20)
        .map(|i| {
            let object_id = format!("obj{i:02}");
            let mut scores = BTreeMap::new();
            for w in VOCAB {
                if rng.random_bool(0.6) {
                    scores.insert(w.to_string(), rng.random_range(-8.0..0.0));
                }
            }
            if scores.is_empty() {
                scores.insert("chair".to_string(), -1.0);
            }
            let dist = sbmpa_core::to_distribution(&scores, &object_id, "type", &Default::default()).unwrap();
            let label = sbmpa_core::LabelRecord {
                object_id,
                property: "type".into(),
                label: VOCAB[rng.random_range(0..VOCAB.len())].to_string(),
                source: "fixture".into(),
            };
            (dist, label)
        })
        .collect()
}

/// Letter counts; a stand-in embedder with exact integer components.
pub fn letter_counts(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; 26];
    for c in text.bytes().filter(u8::is_ascii_lowercase) {
        v[(c - b'a') as usize] += 1.0;
    }
    v
}
