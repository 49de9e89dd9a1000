//! Dating decision rules and reference-artifact retrieval.
//!
//! The classifier's 11-way output is presented as a top-four ranking unless
//! the leading probability falls below the reject threshold, in which case
//! the result is "other stuffs". Reference artifacts are the catalog entries
//! whose stored embeddings have the highest cosine similarity to the query.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::period::Period;

pub const DEFAULT_OTHER_STUFFS_THRESHOLD: f32 = 0.05;
pub const DEFAULT_TOP_PERIODS: usize = 4;
pub const DEFAULT_REFERENCE_K: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum DecisionError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Dated,
    OtherStuffs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedPeriod {
    pub period: Period,
    pub probability: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatingDecision {
    pub outcome: Outcome,
    pub ranked: Vec<RankedPeriod>,
    pub top1_probability: f32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionPolicy {
    /// Top-1 probabilities strictly below this are rejected.
    pub other_stuffs_threshold: f32,
    pub top_n: usize,
}

impl Default for DecisionPolicy {
    fn default() -> Self {
        Self {
            other_stuffs_threshold: DEFAULT_OTHER_STUFFS_THRESHOLD,
            top_n: DEFAULT_TOP_PERIODS,
        }
    }
}

pub fn decide(probabilities: &[f32]) -> Result<DatingDecision, DecisionError> {
    decide_with(&DecisionPolicy::default(), probabilities)
}

/// Accepts one non-negative value per period whose total does not exceed
/// 1 (+1e-4). Mass need not sum to exactly one, so rejection is reachable
/// when no period holds the threshold share.
pub fn decide_with(policy: &DecisionPolicy, probabilities: &[f32]) -> Result<DatingDecision, DecisionError> {
    let invalid = |m: String| Err(DecisionError::InvalidDistribution(m));
    if probabilities.len() != Period::COUNT {
        return invalid(format!("expected {} values, got {}", Period::COUNT, probabilities.len()));
    }
    if let Some(v) = probabilities.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return invalid(format!("value {v} is not a finite non-negative probability"));
    }
    let total: f64 = probabilities.iter().map(|&v| v as f64).sum();
    if total > 1.0 + 1e-4 {
        return invalid(format!("values sum to {total}, more than 1"));
    }

    let mut order: Vec<Period> = Period::ALL.to_vec();
    order.sort_by(|a, b| {
        probabilities[b.index()]
            .total_cmp(&probabilities[a.index()])
            .then(a.cmp(b))
    });
    let top1 = probabilities[order[0].index()];
    if top1 < policy.other_stuffs_threshold {
        return Ok(DatingDecision {
            outcome: Outcome::OtherStuffs,
            ranked: Vec::new(),
            top1_probability: top1,
        });
    }
    Ok(DatingDecision {
        outcome: Outcome::Dated,
        ranked: order
            .into_iter()
            .take(policy.top_n)
            .map(|period| RankedPeriod {
                period,
                probability: probabilities[period.index()],
            })
            .collect(),
        top1_probability: top1,
    })
}

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("duplicate artifact id {0:?}")]
    DuplicateId(String),
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("embedding contains non-finite values")]
    NonFinite,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("index file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for RetrievalError {
    fn from(e: std::io::Error) -> Self {
        RetrievalError::Io(e.to_string())
    }
}

/// Finite, non-empty encoder output vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, RetrievalError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f32, RetrievalError> {
    if a.len() != b.len() {
        return Err(RetrievalError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(RetrievalError::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0) as f32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceHit {
    pub artifact_id: String,
    pub similarity: f32,
}

#[derive(Debug, Clone)]
struct Entry {
    id: String,
    vector: Vec<f32>,
    norm: f64,
}

/// Exact cosine-similarity index. Entries are kept sorted by id, so query
/// results do not depend on insertion order.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingIndex {
    dim: usize,
    entries: Vec<Entry>,
}

impl EmbeddingIndex {
    /// Dimension is taken from the first vector; an empty input yields an
    /// empty index that answers every query with no hits.
    pub fn build<I, S>(pairs: I) -> Result<Self, RetrievalError>
    where
        I: IntoIterator<Item = (S, EmbeddingVector)>,
        S: Into<String>,
    {
        let mut iter = pairs.into_iter().peekable();
        let dim = iter.peek().map(|(_, v)| v.dim()).unwrap_or(0);
        Self::build_with_dim(dim, iter)
    }

    pub fn build_with_dim<I, S>(dim: usize, pairs: I) -> Result<Self, RetrievalError>
    where
        I: IntoIterator<Item = (S, EmbeddingVector)>,
        S: Into<String>,
    {
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        for (id, vector) in pairs {
            let id = id.into();
            if vector.dim() != dim {
                return Err(RetrievalError::DimensionMismatch {
                    expected: dim,
                    found: vector.dim(),
                });
            }
            if !seen.insert(id.clone()) {
                return Err(RetrievalError::DuplicateId(id));
            }
            let n = norm(vector.as_slice());
            if n == 0.0 {
                return Err(RetrievalError::ZeroVector);
            }
            entries.push(Entry {
                id,
                vector: vector.0,
                norm: n,
            });
        }
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Self { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.entries
            .binary_search_by(|e| e.id.as_str().cmp(id))
            .ok()
            .map(|i| self.entries[i].vector.as_slice())
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn query(&self, query: &[f32], k: usize) -> Result<Vec<ReferenceHit>, RetrievalError> {
        self.query_filtered(query, k, |_| true)
    }

    /// Top-`k` by similarity among entries accepted by `filter`; ties are
    /// ordered by ascending id.
    pub fn query_filtered(
        &self,
        query: &[f32],
        k: usize,
        filter: impl Fn(&str) -> bool,
    ) -> Result<Vec<ReferenceHit>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFinite);
        }
        if self.entries.is_empty() {
            return Ok(Vec::new());
        }
        if query.len() != self.dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dim,
                found: query.len(),
            });
        }
        let qn = norm(query);
        if qn == 0.0 {
            return Err(RetrievalError::ZeroVector);
        }
        let mut scored: Vec<(f64, &str)> = self
            .entries
            .iter()
            .filter(|e| filter(&e.id))
            .map(|e| ((dot(query, &e.vector) / (qn * e.norm)).clamp(-1.0, 1.0), e.id.as_str()))
            .collect();
        let cmp = |a: &(f64, &str), b: &(f64, &str)| -> Ordering { b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)) };
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        let hits = scored
            .into_iter()
            .map(|(s, id)| ReferenceHit {
                artifact_id: id.to_string(),
                similarity: s as f32,
            })
            .collect();
        Ok(hits)
    }

    /// Sidecar encoding: `u32 dim | u32 count | (u32 id_len, id, f32[dim])*`,
    /// little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.entries.len() * (8 + self.dim * 4));
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.id.len() as u32).to_le_bytes());
            out.extend_from_slice(e.id.as_bytes());
            for v in &e.vector {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RetrievalError> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], RetrievalError> {
            let end = pos
                .checked_add(n)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| RetrievalError::Format(format!("truncated at byte {pos}")))?;
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap()) as usize;
        let dim = u32_at(take(4)?);
        let count = u32_at(take(4)?);
        let mut pairs = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let len = u32_at(take(4)?);
            let id = std::str::from_utf8(take(len)?)
                .map_err(|_| RetrievalError::Format("id is not UTF-8".into()))?
                .to_string();
            let raw = take(dim.checked_mul(4).ok_or_else(|| RetrievalError::Format("dim overflow".into()))?)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            pairs.push((id, EmbeddingVector::new(values)?));
        }
        if pos != bytes.len() {
            return Err(RetrievalError::Format(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Self::build_with_dim(dim, pairs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
