//! Prefix-forced beam search over one chunk.
//!
//! The forced prefix (BOS followed by everything already emitted) is
//! teacher-forced and scores nothing. Generation starts from that single
//! frontier; an optional [`StepRescorer`] replaces the log-probabilities of
//! the first generated step only. Hypotheses are ranked at the end by
//! `score / generated_len^length_norm_alpha`.

use std::cmp::Ordering;

use crate::domain::{floored_ln, Hypothesis, TokenId};
use crate::error::{Error, Result};
use crate::model::{EncoderHandle, TranslationModel};
use crate::domain::ProbDist;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub max_new_tokens: usize,
    pub length_norm_alpha: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_size: 5,
            max_new_tokens: 64,
            length_norm_alpha: 1.0,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Contract("beam_size must be >= 1".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::Contract("max_new_tokens must be >= 1".into()));
        }
        if !(self.length_norm_alpha >= 0.0) {
            return Err(Error::Contract(format!(
                "length_norm_alpha {} must be >= 0",
                self.length_norm_alpha
            )));
        }
        Ok(())
    }
}

/// Replaces the first-step scores of the beam search.
pub trait StepRescorer {
    /// One score per vocabulary entry; `-inf` excludes the token.
    fn rescore(&self, current: &ProbDist) -> Vec<f64>;

    /// Whether the rescored value also enters the cumulative score, or only
    /// decides which first-step expansions survive.
    fn persist_in_score(&self) -> bool {
        true
    }
}

struct Candidate {
    key: f64,
    beam: usize,
    token: TokenId,
    delta: f64,
}

fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.key
        .total_cmp(&a.key)
        .then(a.token.cmp(&b.token))
        .then(a.beam.cmp(&b.beam))
}

/// Length-normalized final ranking score.
pub fn normalized_score(h: &Hypothesis, alpha: f64) -> f64 {
    let len = h.generated_len().max(1) as f64;
    h.score / len.powf(alpha)
}

/// True when the best finished hypothesis outranks every alive beam at any
/// future length. Further tokens only lower a raw score, so with a
/// non-positive score the most favourable normalization is the length cap.
fn no_alive_can_win(finished: &[Hypothesis], alive: &[Hypothesis], cfg: &BeamConfig) -> bool {
    let Some(best) = finished
        .iter()
        .map(|h| normalized_score(h, cfg.length_norm_alpha))
        .max_by(f64::total_cmp)
    else {
        return false;
    };
    let cap = cfg.max_new_tokens as f64;
    alive.iter().all(|h| {
        let len = h.generated_len().max(1) as f64;
        let bound = if h.score >= 0.0 {
            h.score / len.powf(cfg.length_norm_alpha)
        } else {
            h.score / cap.powf(cfg.length_norm_alpha)
        };
        bound <= best
    })
}

pub fn beam_decode<M: TranslationModel>(
    model: &M,
    handle: &EncoderHandle<M::State>,
    forced_prefix: &[TokenId],
    cfg: &BeamConfig,
    step0_rescorer: Option<&dyn StepRescorer>,
) -> Result<Hypothesis> {
    cfg.validate()?;
    let eos = model.vocab().eos();
    if forced_prefix.first() != Some(&model.vocab().bos()) {
        return Err(Error::Contract("forced prefix must begin with BOS".into()));
    }

    let mut alive = vec![Hypothesis::forced(forced_prefix.to_vec())];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for step in 0..cfg.max_new_tokens {
        let mut outputs = Vec::with_capacity(alive.len());
        let mut candidates = Vec::new();
        for (bi, h) in alive.iter().enumerate() {
            let (dist, attn) = model.decode_step(handle, &h.tokens)?;
            let rescored = match step0_rescorer {
                Some(r) if step == 0 => Some((r.rescore(&dist), r.persist_in_score())),
                _ => None,
            };
            for (tok, &p) in dist.probs().iter().enumerate() {
                let lp = floored_ln(p);
                let (key, delta) = match &rescored {
                    Some((scores, persist)) => {
                        let s = scores[tok];
                        if s == f64::NEG_INFINITY {
                            continue;
                        }
                        (h.score + s, if *persist { s } else { lp })
                    }
                    None => (h.score + lp, lp),
                };
                candidates.push(Candidate {
                    key,
                    beam: bi,
                    token: tok as TokenId,
                    delta,
                });
            }
            outputs.push((dist, attn));
        }
        candidates.sort_by(rank);

        // every EOS expansion is kept as a finished candidate; only the
        // open expansions compete for the beam slots
        let mut next = Vec::with_capacity(cfg.beam_size);
        for c in &candidates {
            let (dist, attn) = &outputs[c.beam];
            if c.token == eos {
                finished.push(alive[c.beam].extend(c.token, dist.clone(), attn.clone(), c.delta, eos)?);
            } else if next.len() < cfg.beam_size {
                next.push(alive[c.beam].extend(c.token, dist.clone(), attn.clone(), c.delta, eos)?);
            }
        }
        alive = next;
        if alive.is_empty() || no_alive_can_win(&finished, &alive, cfg) {
            alive.clear();
            break;
        }
    }

    // survivors are only left over when the length cap was reached
    finished
        .into_iter()
        .chain(alive)
        .fold(None::<(f64, Hypothesis)>, |best, h| {
            let s = normalized_score(&h, cfg.length_norm_alpha);
            match best {
                Some((bs, bh)) if bs >= s => Some((bs, bh)),
                _ => Some((s, h)),
            }
        })
        .map(|(_, h)| h)
        .ok_or_else(|| Error::Contract("beam search produced no hypothesis".into()))
}
