//! Contrastive feedback: distil the previous chunk's unstable predictions
//! into a feedback distribution `P_f`, then rescore the first decoding step
//! of the next chunk against it.
//!
//! For a candidate `y` in the plausible set
//! `V_beta = { y : p_c(y) >= beta * max p_c }` the score is
//!
//! ```text
//! log p_c(y) + log(p_c(y) / max(p_f(y), eps)) = 2 log p_c(y) - log max(p_f(y), eps)
//! ```
//!
//! and every other candidate scores `-inf`. Natural logarithms are used so
//! that the score composes with the beam's cumulative log-probabilities;
//! rankings are identical in any base.

use crate::domain::{floored_ln, FeedbackState, ProbDist, TokenId};
use crate::error::{Error, Result};
use crate::policies::PolicyKind;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfmConfig {
    pub enabled: bool,
    /// Plausibility constraint factor.
    pub beta: f64,
    /// Floor applied to `p_f` before dividing.
    pub feedback_floor: f64,
    /// Keep the contrast term in the cumulative beam score after step 0.
    pub persist_contrast_in_score: bool,
}

impl Default for CfmConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            beta: 0.1,
            feedback_floor: 1e-12,
            persist_contrast_in_score: true,
        }
    }
}

impl CfmConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::Config(format!("beta {} not in (0,1]", self.beta)));
        }
        if !(self.feedback_floor > 0.0) {
            return Err(Error::Config(format!(
                "feedback_floor {} must be > 0",
                self.feedback_floor
            )));
        }
        Ok(())
    }
}

/// Builds `P_f` from a chunk's unstable predictions.
///
/// Local Agreement uses the first unstable token's distribution; the
/// attention policies (and Hold-n) use the arithmetic mean over all of them.
pub fn extract_feedback(kind: PolicyKind, unstable: &[(TokenId, ProbDist)]) -> FeedbackState {
    if unstable.is_empty() {
        return FeedbackState::none();
    }
    let dist = match kind {
        PolicyKind::LocalAgreement => unstable[0].1.clone(),
        PolicyKind::AlignAtt | PolicyKind::EdAtt | PolicyKind::HoldN => {
            let v = unstable[0].1.len();
            let mut mean = vec![0.0; v];
            for (_, d) in unstable {
                for (acc, p) in mean.iter_mut().zip(d.probs()) {
                    *acc += p;
                }
            }
            let k = unstable.len() as f64;
            mean.iter_mut().for_each(|x| *x /= k);
            // the mean of normalized vectors is normalized up to rounding
            let total: f64 = mean.iter().sum();
            mean.iter_mut().for_each(|x| *x /= total);
            ProbDist::new(mean).expect("mean of distributions")
        }
    };
    FeedbackState { dist: Some(dist) }
}

/// Tokens whose current probability is at least `beta` times the maximum.
pub fn plausible_set(current: &ProbDist, beta: f64) -> Vec<TokenId> {
    let threshold = beta * current.max_prob();
    current
        .probs()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= threshold)
        .map(|(i, _)| i as TokenId)
        .collect()
}

/// Contrast term `log(p_c / max(p_f, eps))` for one token, in natural log.
pub fn contrast(p_current: f64, p_feedback: f64, floor: f64) -> f64 {
    floored_ln(p_current) - p_feedback.max(floor).ln()
}

/// Per-token CFM scores over the whole vocabulary; `-inf` outside `V_beta`.
pub fn cfm_score(current: &ProbDist, feedback: &ProbDist, cfg: &CfmConfig) -> Vec<f64> {
    debug_assert_eq!(current.len(), feedback.len());
    let threshold = cfg.beta * current.max_prob();
    current
        .probs()
        .iter()
        .zip(feedback.probs())
        .map(|(&pc, &pf)| {
            if pc >= threshold {
                floored_ln(pc) + contrast(pc, pf, cfg.feedback_floor)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

/// First-step rescorer handed to the beam search.
#[derive(Debug, Clone)]
pub struct CfmRescorer<'a> {
    pub feedback: &'a ProbDist,
    pub cfg: CfmConfig,
}

impl crate::beam::StepRescorer for CfmRescorer<'_> {
    fn rescore(&self, current: &ProbDist) -> Vec<f64> {
        cfm_score(current, self.feedback, &self.cfg)
    }

    fn persist_in_score(&self) -> bool {
        self.cfg.persist_contrast_in_score
    }
}
