//! Stable-hypothesis-detection policies.
//!
//! Each policy splits a chunk's continuation (the generated tokens beyond
//! the already emitted prefix) into a stable part to emit and an unstable
//! part to hold. Emission never crosses EOS: if a policy would accept EOS,
//! the stable part stops right before it.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{AttentionRow, Hypothesis, PolicyDecision, ProbDist, TokenId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    LocalAgreement,
    HoldN,
    EdAtt,
    AlignAtt,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::LocalAgreement => "local_agreement",
            PolicyKind::HoldN => "hold_n",
            PolicyKind::EdAtt => "edatt",
            PolicyKind::AlignAtt => "alignatt",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "local_agreement" | "la" => Ok(PolicyKind::LocalAgreement),
            "hold_n" => Ok(PolicyKind::HoldN),
            "edatt" => Ok(PolicyKind::EdAtt),
            "alignatt" => Ok(PolicyKind::AlignAtt),
            other => Err(Error::Config(format!("unknown policy {other:?}"))),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A policy together with its own hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyConfig {
    LocalAgreement,
    HoldN { n: usize },
    EdAtt { alpha: f64, lambda: usize },
    AlignAtt { f: usize },
}

impl PolicyConfig {
    pub const DEFAULT_LAMBDA: usize = 2;

    pub fn kind(&self) -> PolicyKind {
        match self {
            PolicyConfig::LocalAgreement => PolicyKind::LocalAgreement,
            PolicyConfig::HoldN { .. } => PolicyKind::HoldN,
            PolicyConfig::EdAtt { .. } => PolicyKind::EdAtt,
            PolicyConfig::AlignAtt { .. } => PolicyKind::AlignAtt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PolicyConfig::EdAtt { alpha, lambda } => {
                if !(alpha > 0.0 && alpha <= 1.0) {
                    return Err(Error::Config(format!("alpha {alpha} not in (0,1]")));
                }
                if lambda == 0 {
                    return Err(Error::Config("lambda must be >= 1".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Short label of the policy-specific parameter, e.g. `f=8`.
    pub fn param_label(&self) -> String {
        match self {
            PolicyConfig::LocalAgreement => "-".into(),
            PolicyConfig::HoldN { n } => format!("n={n}"),
            PolicyConfig::EdAtt { alpha, lambda } => format!("alpha={alpha},lambda={lambda}"),
            PolicyConfig::AlignAtt { f } => format!("f={f}"),
        }
    }
}

/// The generated part of a hypothesis beyond the forced prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct Continuation {
    pub tokens: Vec<TokenId>,
    pub dists: Vec<ProbDist>,
    pub attn: Vec<AttentionRow>,
}

impl Continuation {
    pub fn new(tokens: Vec<TokenId>, dists: Vec<ProbDist>, attn: Vec<AttentionRow>) -> Result<Self> {
        if tokens.len() != dists.len() || tokens.len() != attn.len() {
            return Err(Error::Contract(format!(
                "continuation has {} tokens, {} dists, {} attention rows",
                tokens.len(),
                dists.len(),
                attn.len()
            )));
        }
        Ok(Self {
            tokens,
            dists,
            attn,
        })
    }

    pub fn from_hypothesis(h: &Hypothesis) -> Self {
        Self {
            tokens: h.generated().to_vec(),
            dists: h.step_dists.clone(),
            attn: h.step_attn.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn split(&self, stable_len: usize, eos: TokenId) -> PolicyDecision {
        let cut = self
            .tokens
            .iter()
            .position(|&t| t == eos)
            .map_or(stable_len, |e| e.min(stable_len))
            .min(self.tokens.len());
        let unstable = self.tokens[cut..]
            .iter()
            .copied()
            .zip(self.dists[cut..].iter().cloned())
            .collect();
        PolicyDecision {
            stable: self.tokens[..cut].to_vec(),
            unstable,
            source_exhausted_flush: false,
        }
    }
}

/// Emits the longest common prefix of the previous and current continuations.
pub fn local_agreement(prev: &[TokenId], curr: &Continuation, eos: TokenId) -> PolicyDecision {
    let lcp = prev
        .iter()
        .zip(&curr.tokens)
        .take_while(|(a, b)| a == b)
        .count();
    curr.split(lcp, eos)
}

/// Holds back the last `n` tokens.
pub fn hold_n(curr: &Continuation, n: usize, eos: TokenId) -> PolicyDecision {
    curr.split(curr.len().saturating_sub(n), eos)
}

/// Stops at the first token whose attention peak lies in the last `f` frames.
pub fn alignatt(curr: &Continuation, f: usize, frames_seen: usize, eos: TokenId) -> PolicyDecision {
    let window_start = frames_seen.saturating_sub(f);
    let stop = curr.attn.iter().position(|row| match row.argmax() {
        Some(frame) => f > 0 && frame >= window_start,
        None => f > 0,
    });
    curr.split(stop.unwrap_or(curr.len()), eos)
}

/// Stops at the first token whose attention mass on the last `lambda`
/// frames strictly exceeds `alpha`.
pub fn edatt(curr: &Continuation, alpha: f64, lambda: usize, eos: TokenId) -> PolicyDecision {
    let stop = curr.attn.iter().position(|row| row.tail_mass(lambda) > alpha);
    curr.split(stop.unwrap_or(curr.len()), eos)
}

/// End-of-source: everything before EOS becomes stable.
pub fn finalize_flush(curr: &Continuation, eos: TokenId) -> PolicyDecision {
    let end = curr.tokens.iter().position(|&t| t == eos).unwrap_or(curr.len());
    PolicyDecision {
        stable: curr.tokens[..end].to_vec(),
        unstable: Vec::new(),
        source_exhausted_flush: true,
    }
}

/// Routes one chunk to the configured policy. `prev` is Local Agreement's
/// previous unstable continuation (`None` on the first chunk, where LA emits
/// nothing). The final chunk always flushes.
pub fn decide(
    cfg: &PolicyConfig,
    prev: Option<&[TokenId]>,
    curr: &Continuation,
    frames_seen: usize,
    eos: TokenId,
    is_final: bool,
) -> PolicyDecision {
    if is_final {
        return finalize_flush(curr, eos);
    }
    match *cfg {
        PolicyConfig::LocalAgreement => match prev {
            Some(prev) => local_agreement(prev, curr, eos),
            None => curr.split(0, eos),
        },
        PolicyConfig::HoldN { n } => hold_n(curr, n, eos),
        PolicyConfig::EdAtt { alpha, lambda } => edatt(curr, alpha, lambda, eos),
        PolicyConfig::AlignAtt { f } => alignatt(curr, f, frames_seen, eos),
    }
}
