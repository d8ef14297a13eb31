//! Shared value types. Everything here is immutable after construction
//! and validated on the way in.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Floor applied before taking logarithms of probabilities.
pub const LOG_FLOOR: f64 = 1e-12;

const DIST_TOL: f64 = 1e-9;
const ATTN_TOL: f64 = 1e-6;

/// Natural log with the probability floor applied.
pub fn floored_ln(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

/// Target vocabulary with dense ids `0..V` and two reserved specials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    surfaces: Vec<String>,
    bos: TokenId,
    eos: TokenId,
}

impl Vocabulary {
    pub fn new(surfaces: Vec<String>, bos: TokenId, eos: TokenId) -> Result<Self> {
        let size = surfaces.len();
        if bos == eos {
            return Err(Error::InvalidVocabulary("BOS and EOS share an id".into()));
        }
        if bos as usize >= size || eos as usize >= size {
            return Err(Error::InvalidVocabulary(format!(
                "special ids ({bos}, {eos}) out of range for size {size}"
            )));
        }
        let mut seen = HashSet::with_capacity(size);
        for s in &surfaces {
            if !seen.insert(s.as_str()) {
                return Err(Error::InvalidVocabulary(format!("duplicate surface {s:?}")));
            }
        }
        Ok(Self { surfaces, bos, eos })
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn bos(&self) -> TokenId {
        self.bos
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.surfaces.get(id as usize).map(String::as_str)
    }

    pub fn id_of(&self, surface: &str) -> Option<TokenId> {
        self.surfaces
            .iter()
            .position(|s| s == surface)
            .map(|i| i as TokenId)
    }
}

/// A normalized probability distribution over the target vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    /// Wraps an already-normalized vector, rejecting anything that is not a
    /// distribution within `1e-9`.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty vector".into()));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::InvalidDistribution(format!("entry {i} is {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > DIST_TOL {
            return Err(Error::InvalidDistribution(format!("sums to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(size: usize) -> Self {
        Self(vec![1.0 / size as f64; size])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        self.0[id as usize]
    }

    /// Highest-probability token; ties go to the lowest id.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = i;
            }
        }
        best as TokenId
    }

    pub fn max_prob(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }
}

/// Scales non-negative scores to a distribution.
pub fn normalize(raw: &[f64]) -> Result<ProbDist> {
    if let Some((i, x)) = raw
        .iter()
        .enumerate()
        .find(|(_, x)| !x.is_finite() || **x < 0.0)
    {
        return Err(Error::InvalidDistribution(format!(
            "raw score {i} is {x}"
        )));
    }
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidDistribution("all-zero scores".into()));
    }
    ProbDist::new(raw.iter().map(|x| x / total).collect())
}

/// Cross-attention weights of one decoding step over the received frames.
///
/// An empty row is allowed only when no frame has been received yet.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRow(Vec<f64>);

impl AttentionRow {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Ok(Self(weights));
        }
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w < 0.0)
        {
            return Err(Error::InvalidAttention(format!("weight {i} is {w}")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > ATTN_TOL {
            return Err(Error::InvalidAttention(format!("sums to {sum}")));
        }
        Ok(Self(weights))
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the most-attended frame (lowest index on ties).
    pub fn argmax(&self) -> Option<usize> {
        if self.0.is_empty() {
            return None;
        }
        let mut best = 0;
        for (i, &w) in self.0.iter().enumerate().skip(1) {
            if w > self.0[best] {
                best = i;
            }
        }
        Some(best)
    }

    /// Attention mass on the last `count` frames.
    pub fn tail_mass(&self, count: usize) -> f64 {
        let start = self.0.len().saturating_sub(count);
        self.0[start..].iter().sum()
    }
}

/// A scored target sequence. `tokens` includes the forced prefix;
/// `step_dists`/`step_attn` cover only the generated steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    pub score: f64,
    pub step_dists: Vec<ProbDist>,
    pub step_attn: Vec<AttentionRow>,
    pub finished: bool,
    forced_len: usize,
}

impl Hypothesis {
    pub fn forced(prefix: Vec<TokenId>) -> Self {
        let forced_len = prefix.len();
        Self {
            tokens: prefix,
            score: 0.0,
            step_dists: Vec::new(),
            step_attn: Vec::new(),
            finished: false,
            forced_len,
        }
    }

    /// Appends one generated token together with the step's distribution and
    /// attention. Extending past EOS is a contract violation.
    pub fn extend(
        &self,
        token: TokenId,
        dist: ProbDist,
        attn: AttentionRow,
        score_delta: f64,
        eos: TokenId,
    ) -> Result<Self> {
        if self.finished {
            return Err(Error::Contract("extending a finished hypothesis".into()));
        }
        let mut next = self.clone();
        next.tokens.push(token);
        next.step_dists.push(dist);
        next.step_attn.push(attn);
        next.score += score_delta;
        next.finished = token == eos;
        Ok(next)
    }

    pub fn forced_len(&self) -> usize {
        self.forced_len
    }

    pub fn generated(&self) -> &[TokenId] {
        &self.tokens[self.forced_len..]
    }

    pub fn generated_len(&self) -> usize {
        self.tokens.len() - self.forced_len
    }
}

/// The stable/unstable split of one chunk's continuation.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDecision {
    pub stable: Vec<TokenId>,
    pub unstable: Vec<(TokenId, ProbDist)>,
    pub source_exhausted_flush: bool,
}

impl PolicyDecision {
    pub fn new(
        stable: Vec<TokenId>,
        unstable: Vec<(TokenId, ProbDist)>,
        source_exhausted_flush: bool,
    ) -> Result<Self> {
        if source_exhausted_flush && !unstable.is_empty() {
            return Err(Error::Contract(
                "a final flush cannot leave unstable tokens".into(),
            ));
        }
        Ok(Self {
            stable,
            unstable,
            source_exhausted_flush,
        })
    }

    pub fn unstable_ids(&self) -> Vec<TokenId> {
        self.unstable.iter().map(|(t, _)| *t).collect()
    }
}

/// Feedback distribution carried from one chunk into the next.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeedbackState {
    pub dist: Option<ProbDist>,
}

impl FeedbackState {
    pub fn none() -> Self {
        Self { dist: None }
    }

    pub fn is_present(&self) -> bool {
        self.dist.is_some()
    }
}

/// One committed token with its source-clock and wall-clock delays.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionEvent {
    pub token: TokenId,
    pub ideal_delay_ms: f64,
    pub wall_ms: f64,
}
