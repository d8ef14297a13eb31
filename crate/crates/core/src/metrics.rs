//! Latency and quality metrics.
//!
//! LAAL (length-adaptive average lagging) for a hypothesis of `|Y|` tokens
//! emitted at delays `d_1..d_|Y|` over a source of duration `T`:
//!
//! ```text
//! r   = T / max(|Y|, |ref|)
//! tau = min { i : d_i >= T }  (or |Y| when no delay reaches T)
//! LAAL = 1/tau * sum_{i=1..tau} (d_i - (i - 1) * r)
//! ```
//!
//! BLEU is corpus-level 4-gram BLEU over token ids with a brevity penalty.
//! Zero n-gram matches for n >= 2 are smoothed to `1 / (2 * total_n)`; no
//! unigram match at all scores 0.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{EmissionEvent, TokenId};
use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyRecord {
    pub events: Vec<EmissionEvent>,
    pub source_duration_ms: f64,
    pub ref_len: usize,
}

pub fn laal(rec: &LatencyRecord, computational_aware: bool) -> Result<f64> {
    if rec.events.is_empty() {
        return Err(Error::UndefinedLatency("no emitted tokens".into()));
    }
    if !(rec.source_duration_ms > 0.0) {
        return Err(Error::UndefinedLatency(format!(
            "source duration {} ms",
            rec.source_duration_ms
        )));
    }
    let delays: Vec<f64> = rec
        .events
        .iter()
        .map(|e| {
            if computational_aware {
                e.wall_ms
            } else {
                e.ideal_delay_ms
            }
        })
        .collect();
    let duration = rec.source_duration_ms;
    let rate = duration / delays.len().max(rec.ref_len) as f64;
    let tau = delays
        .iter()
        .position(|&d| d >= duration)
        .map_or(delays.len(), |i| i + 1);
    let lag: f64 = delays[..tau]
        .iter()
        .enumerate()
        .map(|(i, &d)| d - i as f64 * rate)
        .sum();
    Ok(lag / tau as f64)
}

/// Sufficient statistics of corpus BLEU; additive over sentences.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BleuStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    pub fn sentence(hyp: &[TokenId], reference: &[TokenId]) -> Self {
        let mut s = Self {
            hyp_len: hyp.len() as u64,
            ref_len: reference.len() as u64,
            ..Self::default()
        };
        for n in 1..=MAX_ORDER {
            let ref_counts = ngram_counts(reference, n);
            let hyp_counts = ngram_counts(hyp, n);
            s.totals[n - 1] = hyp.len().saturating_sub(n - 1) as u64;
            s.matches[n - 1] = hyp_counts
                .iter()
                .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
                .sum();
        }
        s
    }

    pub fn add(&mut self, other: &Self) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// BLEU in `[0, 100]`.
    pub fn score(&self) -> f64 {
        if self.matches[0] == 0 || self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..MAX_ORDER {
            let total = self.totals[n];
            if total == 0 {
                return 0.0;
            }
            let p = if self.matches[n] == 0 {
                1.0 / (2.0 * total as f64)
            } else {
                self.matches[n] as f64 / total as f64
            };
            log_sum += p.ln();
        }
        let (c, r) = (self.hyp_len as f64, self.ref_len as f64);
        let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
        100.0 * bp * (log_sum / MAX_ORDER as f64).exp()
    }
}

fn ngram_counts(tokens: &[TokenId], n: usize) -> HashMap<&[TokenId], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

fn sentence_stats(hyps: &[Vec<TokenId>], refs: &[Vec<TokenId>]) -> Result<Vec<BleuStats>> {
    if hyps.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if hyps.len() != refs.len() {
        return Err(Error::Contract(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    Ok(hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| BleuStats::sentence(h, r))
        .collect())
}

pub fn corpus_bleu(hyps: &[Vec<TokenId>], refs: &[Vec<TokenId>]) -> Result<f64> {
    let mut total = BleuStats::default();
    for s in sentence_stats(hyps, refs)? {
        total.add(&s);
    }
    Ok(total.score())
}

/// Percentile bootstrap interval of corpus BLEU over sentence resamples.
///
/// The interval is widened to include the point estimate when the
/// percentile bounds alone would miss it.
pub fn bootstrap_ci(
    hyps: &[Vec<TokenId>],
    refs: &[Vec<TokenId>],
    resamples: usize,
    seed: u64,
    level: f64,
) -> Result<(f64, f64)> {
    if resamples < 100 {
        return Err(Error::Config(format!("resamples {resamples} < 100")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("level {level} not in (0,1)")));
    }
    let stats = sentence_stats(hyps, refs)?;
    let mut point = BleuStats::default();
    stats.iter().for_each(|s| point.add(s));
    let point = point.score();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = stats.len();
    let mut scores: Vec<f64> = (0..resamples)
        .map(|_| {
            let mut acc = BleuStats::default();
            for _ in 0..n {
                acc.add(&stats[rng.gen_range(0..n)]);
            }
            acc.score()
        })
        .collect();
    scores.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let low = quantile(&scores, tail).min(point);
    let high = quantile(&scores, 1.0 - tail).max(point);
    Ok((low, high))
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}
