//! Simultaneous translation decoding with stable-hypothesis decision policies
//! and contrastive feedback rescoring.
//!
//! The crate is organised bottom-up:
//!
//! - [`domain`]: value types shared by every other module (distributions,
//!   hypotheses, policy decisions, emission events).
//! - [`model`]: the incremental translation-model interface.
//! - [`synthetic`]: a seedable task generator and a model implementing the
//!   interface, with lookahead-ambiguous source words.
//! - [`beam`]: prefix-forced beam search with a first-step rescoring hook.
//! - [`policies`]: Local Agreement, Hold-n, AlignAtt and EDAtt.
//! - [`cfm`]: feedback extraction and contrastive first-step rescoring.
//! - [`engine`]: the chunk-level streaming loop.
//! - [`metrics`]: LAAL, corpus BLEU and bootstrap confidence intervals.
//! - [`harness`]: run/sweep/score drivers and their on-disk formats.

pub mod beam;
pub mod cfm;
pub mod domain;
pub mod engine;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod policies;
pub mod synthetic;

pub use error::{Error, Result};
