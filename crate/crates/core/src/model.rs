//! Incremental translation-model interface.
//!
//! Every chunk re-encodes the full received source prefix; caching, if any,
//! is the model's own business. `decode_step` returns one attention row per
//! call that is already layer-selected and head-averaged.

use serde::{Deserialize, Serialize};

use crate::domain::{AttentionRow, ProbDist, TokenId, Vocabulary};
use crate::error::{Error, Result};

/// A received source prefix: opaque frame symbols of fixed duration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourcePrefix {
    pub frames: Vec<u32>,
    pub frame_ms: u32,
}

impl SourcePrefix {
    pub fn new(frames: Vec<u32>, frame_ms: u32) -> Result<Self> {
        if frame_ms == 0 {
            return Err(Error::Contract("frame_ms must be positive".into()));
        }
        Ok(Self { frames, frame_ms })
    }

    pub fn empty(frame_ms: u32) -> Result<Self> {
        Self::new(Vec::new(), frame_ms)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration_ms(&self) -> f64 {
        self.frames.len() as f64 * self.frame_ms as f64
    }
}

/// Encoder output for one source prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderHandle<S> {
    frames_seen: usize,
    state: S,
}

impl<S> EncoderHandle<S> {
    pub fn new(frames_seen: usize, state: S) -> Self {
        Self { frames_seen, state }
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }

    pub fn state(&self) -> &S {
        &self.state
    }
}

/// An offline-trained translation model used incrementally.
///
/// Implementations must be pure: the same handle and target prefix always
/// yield bit-identical outputs, and the attention row has exactly
/// `frames_seen` entries.
pub trait TranslationModel: Send + Sync {
    type State: Send + Sync;

    fn vocab(&self) -> &Vocabulary;

    fn encode(&self, prefix: &SourcePrefix) -> EncoderHandle<Self::State>;

    fn decode_step(
        &self,
        handle: &EncoderHandle<Self::State>,
        target_prefix: &[TokenId],
    ) -> Result<(ProbDist, AttentionRow)>;
}

/// Shared precondition check for `decode_step` implementations.
pub fn check_target_prefix(vocab: &Vocabulary, target_prefix: &[TokenId]) -> Result<()> {
    match target_prefix.first() {
        None => Err(Error::Contract("empty target prefix".into())),
        Some(&t) if t != vocab.bos() => Err(Error::Contract(format!(
            "target prefix must start with BOS ({}), got {t}",
            vocab.bos()
        ))),
        Some(_) => Ok(()),
    }
}
