//! Test models shared by the integration tests.
#![allow(dead_code)]

pub mod oracles;

use std::collections::HashMap;

use simulcfm::domain::{normalize, AttentionRow, ProbDist, TokenId, Vocabulary};
use simulcfm::model::{check_target_prefix, EncoderHandle, SourcePrefix, TranslationModel};
use simulcfm::Result;

pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn unit(z: u64) -> f64 {
    (z >> 11) as f64 / (1u64 << 53) as f64
}

pub fn vocab(v: usize) -> Vocabulary {
    Vocabulary::new((0..v).map(|i| format!("t{i}")).collect(), 0, 1).unwrap()
}

/// Pseudo-random model: the distribution depends on the salt, the number of
/// frames and the whole target prefix. BOS never gets mass.
pub struct HashModel {
    vocab: Vocabulary,
    salt: u64,
    /// Exponent applied to the raw weights; larger values give peakier rows.
    pub sharpness: i32,
}

impl HashModel {
    pub fn new(v: usize, salt: u64) -> Self {
        Self {
            vocab: vocab(v),
            salt,
            sharpness: 1,
        }
    }
}

impl TranslationModel for HashModel {
    type State = ();

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn encode(&self, prefix: &SourcePrefix) -> EncoderHandle<()> {
        EncoderHandle::new(prefix.len(), ())
    }

    fn decode_step(&self, h: &EncoderHandle<()>, prefix: &[TokenId]) -> Result<(ProbDist, AttentionRow)> {
        check_target_prefix(&self.vocab, prefix)?;
        let mut z = mix(self.salt ^ (h.frames_seen() as u64).wrapping_mul(0x1000_0001));
        for &t in prefix {
            z = mix(z ^ u64::from(t));
        }
        let raw: Vec<f64> = (0..self.vocab.len())
            .map(|i| {
                z = mix(z ^ i as u64);
                if i == 0 {
                    0.0
                } else {
                    (0.02 + unit(z)).powi(self.sharpness)
                }
            })
            .collect();
        let dist = normalize(&raw)?;
        let n = h.frames_seen();
        let weights: Vec<f64> = (0..n)
            .map(|_| {
                z = mix(z);
                0.01 + unit(z)
            })
            .collect();
        let attn = if n == 0 {
            AttentionRow::new(Vec::new())?
        } else {
            let total: f64 = weights.iter().sum();
            AttentionRow::new(weights.iter().map(|w| w / total).collect())?
        };
        Ok((dist, attn))
    }
}

/// Scripted model: outputs are looked up by (frames seen, target prefix).
/// Unlisted prefixes put almost all mass on EOS.
pub struct TableModel {
    vocab: Vocabulary,
    table: HashMap<(usize, Vec<TokenId>), Vec<f64>>,
}

impl TableModel {
    pub fn new(v: usize) -> Self {
        Self {
            vocab: vocab(v),
            table: HashMap::new(),
        }
    }

    pub fn set(&mut self, frames: usize, prefix: &[TokenId], probs: &[f64]) {
        assert_eq!(probs.len(), self.vocab.len());
        self.table.insert((frames, prefix.to_vec()), probs.to_vec());
    }
}

impl TranslationModel for TableModel {
    type State = ();

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn encode(&self, prefix: &SourcePrefix) -> EncoderHandle<()> {
        EncoderHandle::new(prefix.len(), ())
    }

    fn decode_step(&self, h: &EncoderHandle<()>, prefix: &[TokenId]) -> Result<(ProbDist, AttentionRow)> {
        check_target_prefix(&self.vocab, prefix)?;
        let v = self.vocab.len();
        let probs = match self.table.get(&(h.frames_seen(), prefix.to_vec())) {
            Some(p) => p.clone(),
            None => {
                let rest = 0.01 / (v - 2) as f64;
                (0..v)
                    .map(|i| match i {
                        0 => 0.0,
                        1 => 0.99,
                        _ => rest,
                    })
                    .collect()
            }
        };
        let n = h.frames_seen();
        let attn = AttentionRow::new(vec![1.0 / n as f64; n])?;
        Ok((ProbDist::new(probs)?, attn))
    }
}

/// Every sequence over non-BOS tokens that ends in EOS within `max_len`
/// steps or reaches `max_len` without EOS, with its summed log-probability.
pub fn enumerate<M: TranslationModel>(
    model: &M,
    handle: &EncoderHandle<M::State>,
    prefix: &[TokenId],
    max_len: usize,
) -> Vec<(Vec<TokenId>, f64)> {
    let eos = model.vocab().eos();
    let mut out = Vec::new();
    let mut stack = vec![(prefix.to_vec(), 0.0)];
    while let Some((seq, score)) = stack.pop() {
        let generated = seq.len() - prefix.len();
        if generated == max_len || seq.last() == Some(&eos) && generated > 0 {
            out.push((seq[prefix.len()..].to_vec(), score));
            continue;
        }
        let (dist, _) = model.decode_step(handle, &seq).unwrap();
        for (t, &p) in dist.probs().iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            let mut next = seq.clone();
            next.push(t as TokenId);
            stack.push((next, score + p.ln()));
        }
    }
    out
}
