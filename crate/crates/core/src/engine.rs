//! Chunk-level streaming loop.
//!
//! Per chunk: extend and re-encode the source, beam-decode with the emitted
//! prefix forced (rescoring the first step with the previous chunk's
//! feedback when CFM is on), split the hypothesis with the policy, keep the
//! new feedback and append the stable tokens as emission events.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::beam::{beam_decode, BeamConfig, StepRescorer};
use crate::cfm::{extract_feedback, CfmConfig, CfmRescorer};
use crate::domain::{EmissionEvent, FeedbackState, TokenId};
use crate::error::{Error, Result};
use crate::model::{SourcePrefix, TranslationModel};
use crate::policies::{decide, Continuation, PolicyConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    /// Computation is free: wall time equals consumed source time.
    Ideal,
    /// Wall time adds the measured cumulative compute time of the stream.
    Measured,
}

impl Clock {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ideal" => Ok(Clock::Ideal),
            "measured" => Ok(Clock::Measured),
            other => Err(Error::Config(format!("unknown clock {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Clock::Ideal => "ideal",
            Clock::Measured => "measured",
        }
    }
}

/// Per-chunk bound on generated tokens.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TokenCap {
    /// Use `BeamConfig::max_new_tokens` as is.
    Fixed,
    /// `frames_consumed / frames_per_token + slack`.
    PerSource { frames_per_token: usize, slack: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    pub policy: PolicyConfig,
    pub beam: BeamConfig,
    pub cfm: CfmConfig,
    pub cap: TokenCap,
}

impl EngineConfig {
    fn max_new_tokens(&self, frames_consumed: usize) -> usize {
        match self.cap {
            TokenCap::Fixed => self.beam.max_new_tokens,
            TokenCap::PerSource {
                frames_per_token,
                slack,
            } => frames_consumed / frames_per_token.max(1) + slack,
        }
    }
}

/// What happened in one chunk; persisted in run logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub index: usize,
    pub frames_consumed: usize,
    pub hypothesis: Vec<TokenId>,
    pub stable: Vec<TokenId>,
    pub unstable: Vec<TokenId>,
    pub feedback_applied: bool,
    pub is_final: bool,
}

#[derive(Debug, Clone)]
pub struct StreamState {
    pub emitted: Vec<TokenId>,
    pub feedback: FeedbackState,
    /// Local Agreement's previous unstable continuation; `None` before the first chunk.
    pub prev_continuation: Option<Vec<TokenId>>,
    pub source: SourcePrefix,
    pub events: Vec<EmissionEvent>,
    pub chunks: Vec<ChunkRecord>,
    pub clock: Clock,
    compute_ms: f64,
    closed: bool,
}

impl StreamState {
    pub fn new(frame_ms: u32, clock: Clock) -> Result<Self> {
        Ok(Self {
            emitted: Vec::new(),
            feedback: FeedbackState::none(),
            prev_continuation: None,
            source: SourcePrefix::empty(frame_ms)?,
            events: Vec::new(),
            chunks: Vec::new(),
            clock,
            compute_ms: 0.0,
            closed: false,
        })
    }

    pub fn frames_consumed(&self) -> usize {
        self.source.len()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn ideal_delay_ms(&self) -> f64 {
        self.source.duration_ms()
    }
}

/// Processes one source chunk.
pub fn step_chunk<M: TranslationModel>(
    state: &mut StreamState,
    new_frames: &[u32],
    model: &M,
    cfg: &EngineConfig,
    is_final: bool,
) -> Result<ChunkRecord> {
    if state.closed {
        return Err(Error::Usage("chunk received after the final chunk".into()));
    }
    if new_frames.is_empty() && !is_final {
        return Err(Error::Usage("empty non-final chunk".into()));
    }
    let started = Instant::now();

    state.source.frames.extend_from_slice(new_frames);
    let handle = model.encode(&state.source);

    let vocab = model.vocab();
    let mut forced = Vec::with_capacity(state.emitted.len() + 1);
    forced.push(vocab.bos());
    forced.extend_from_slice(&state.emitted);

    let beam = BeamConfig {
        max_new_tokens: cfg.max_new_tokens(state.frames_consumed()),
        ..cfg.beam
    };
    let rescorer = match (&state.feedback.dist, cfg.cfm.enabled) {
        (Some(feedback), true) => Some(CfmRescorer {
            feedback,
            cfg: cfg.cfm,
        }),
        _ => None,
    };
    let feedback_applied = rescorer.is_some();
    let hyp = beam_decode(
        model,
        &handle,
        &forced,
        &beam,
        rescorer.as_ref().map(|r| r as &dyn StepRescorer),
    )?;

    let continuation = Continuation::from_hypothesis(&hyp);
    let decision = decide(
        &cfg.policy,
        state.prev_continuation.as_deref(),
        &continuation,
        handle.frames_seen(),
        vocab.eos(),
        is_final,
    );

    state.feedback = extract_feedback(cfg.policy.kind(), &decision.unstable);
    let unstable = decision.unstable_ids();
    state.prev_continuation = Some(unstable.clone());

    if state.clock == Clock::Measured {
        state.compute_ms += started.elapsed().as_secs_f64() * 1000.0;
    }
    let ideal = state.ideal_delay_ms();
    let wall = ideal + state.compute_ms;
    for &token in &decision.stable {
        state.events.push(EmissionEvent {
            token,
            ideal_delay_ms: ideal,
            wall_ms: wall,
        });
    }
    state.emitted.extend_from_slice(&decision.stable);
    if is_final {
        state.closed = true;
        state.feedback = FeedbackState::none();
    }

    let record = ChunkRecord {
        index: state.chunks.len(),
        frames_consumed: state.frames_consumed(),
        hypothesis: continuation.tokens,
        stable: decision.stable,
        unstable,
        feedback_applied,
        is_final,
    };
    state.chunks.push(record.clone());
    Ok(record)
}

/// Streams a whole source through the engine in fixed-size chunks; the
/// last chunk is final.
pub fn translate_stream<M: TranslationModel>(
    model: &M,
    source: &SourcePrefix,
    chunk_frames: usize,
    cfg: &EngineConfig,
    clock: Clock,
) -> Result<StreamState> {
    if chunk_frames == 0 {
        return Err(Error::Config("chunk must span at least one frame".into()));
    }
    let mut state = StreamState::new(source.frame_ms, clock)?;
    if source.is_empty() {
        step_chunk(&mut state, &[], model, cfg, true)?;
        return Ok(state);
    }
    let chunks: Vec<&[u32]> = source.frames.chunks(chunk_frames).collect();
    let last = chunks.len() - 1;
    for (i, chunk) in chunks.into_iter().enumerate() {
        step_chunk(&mut state, chunk, model, cfg, i == last)?;
    }
    Ok(state)
}
