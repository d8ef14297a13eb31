//! Seedable synthetic translation task and the model that solves it.
//!
//! The task is a monotonic one-to-one mapping from source words to target
//! tokens. Each source word occupies `frames_per_token` frames whose symbol
//! is the word id. Three kinds of source words exist:
//!
//! - regular words, translated by a fixed lexicon;
//! - markers, translated like regular words but also acting as
//!   disambiguators;
//! - ambiguous words with a default sense and an alternative sense. The
//!   alternative is correct when a marker follows within
//!   [`DISAMBIGUATION_WINDOW`] source positions.
//!
//! Before the marker is received, the model puts `1 - m` of the mass on the
//! default (wrong) sense and `m < 0.5` on the correct one. Once the marker
//! arrives the wrong-sense mass decays toward `s * (1 - m)` where `s` is the
//! per-occurrence stickiness drawn around `sticky_prior`, so plain argmax
//! can stay wrong while the correct sense's probability ratio across chunks
//! moves in its favour.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{AttentionRow, ProbDist, TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{check_target_prefix, EncoderHandle, SourcePrefix, TranslationModel};

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;

/// Maximum distance (in source words) between an ambiguous word and the
/// marker that disambiguates it.
pub const DISAMBIGUATION_WINDOW: usize = 3;

/// Probability mass spread uniformly over all non-BOS tokens.
pub const NOISE_MASS: f64 = 0.05;

/// Per-received-word decay factor of the excess wrong-sense mass above the
/// sticky floor.
pub const STICKY_DECAY: f64 = 0.5;

const MARKER_COUNT: usize = 2;
const LEXICON_STREAM: u64 = 0x5eed_1e71_c0de_0001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub seed: u64,
    pub vocab_size: usize,
    pub utterance_count: usize,
    pub source_len_range: (usize, usize),
    pub frames_per_token: u32,
    pub frame_ms: u32,
    pub ambiguity_rate: f64,
    pub sticky_prior: f64,
    pub attn_spread: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            vocab_size: 32,
            utterance_count: 500,
            source_len_range: (8, 20),
            frames_per_token: 5,
            frame_ms: 40,
            ambiguity_rate: 0.3,
            sticky_prior: 0.58,
            attn_spread: 0.4,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vocab_size < 8 {
            return bad(format!("vocab_size must be >= 8, got {}", self.vocab_size));
        }
        if self.frames_per_token == 0 {
            return bad("frames_per_token must be >= 1".into());
        }
        if self.frame_ms == 0 {
            return bad("frame_ms must be positive".into());
        }
        let (lo, hi) = self.source_len_range;
        if lo == 0 || lo > hi {
            return bad(format!("bad source_len_range ({lo}, {hi})"));
        }
        if !(0.0..=1.0).contains(&self.ambiguity_rate) {
            return bad(format!("ambiguity_rate {} not in [0,1]", self.ambiguity_rate));
        }
        if !(self.sticky_prior > 0.0 && self.sticky_prior < 1.0) {
            return bad(format!("sticky_prior {} not in (0,1)", self.sticky_prior));
        }
        if !(self.attn_spread > 0.0 && self.attn_spread.is_finite()) {
            return bad(format!("attn_spread {} must be > 0", self.attn_spread));
        }
        Ok(())
    }

    pub fn frame_duration_per_token_ms(&self) -> u32 {
        self.frames_per_token * self.frame_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WordKind {
    Regular { target: TokenId },
    Marker { target: TokenId },
    Ambiguous { default: TokenId, alternative: TokenId },
}

/// Source-word inventory derived from `(vocab_size, seed)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    words: Vec<WordKind>,
    regular: Vec<u32>,
    ambiguous: Vec<u32>,
    markers: Vec<u32>,
}

impl Lexicon {
    pub fn build(vocab_size: usize, seed: u64) -> Self {
        let content = vocab_size - 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ LEXICON_STREAM);
        let mut words = Vec::new();
        let mut regular = Vec::new();
        for k in 0..content {
            regular.push(words.len() as u32);
            words.push(WordKind::Regular {
                target: 2 + k as TokenId,
            });
        }
        let mut perm: Vec<TokenId> = (2..vocab_size as TokenId).collect();
        perm.shuffle(&mut rng);
        let ambiguous_count = (content / 4).max(1);
        let mut ambiguous = Vec::new();
        for pair in perm.chunks_exact(2).take(ambiguous_count) {
            ambiguous.push(words.len() as u32);
            words.push(WordKind::Ambiguous {
                default: pair[0],
                alternative: pair[1],
            });
        }
        let mut markers = Vec::new();
        for _ in 0..MARKER_COUNT {
            markers.push(words.len() as u32);
            words.push(WordKind::Marker {
                target: rng.gen_range(2..vocab_size as TokenId),
            });
        }
        Self {
            words,
            regular,
            ambiguous,
            markers,
        }
    }

    pub fn kind(&self, word: u32) -> Option<WordKind> {
        self.words.get(word as usize).copied()
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    pub fn regular_words(&self) -> &[u32] {
        &self.regular
    }

    pub fn ambiguous_words(&self) -> &[u32] {
        &self.ambiguous
    }

    pub fn marker_words(&self) -> &[u32] {
        &self.markers
    }

    fn is_marker(&self, word: u32) -> bool {
        matches!(self.kind(word), Some(WordKind::Marker { .. }))
    }

    /// Index of the first marker within the disambiguation window after
    /// `pos`, looking only at `received`.
    pub fn marker_after(&self, received: &[u32], pos: usize) -> Option<usize> {
        let end = (pos + DISAMBIGUATION_WINDOW).min(received.len().saturating_sub(1));
        (pos + 1..=end).find(|&q| q < received.len() && self.is_marker(received[q]))
    }

    /// Reference translation of a complete source sentence.
    pub fn translate(&self, source: &[u32]) -> Vec<TokenId> {
        source
            .iter()
            .enumerate()
            .map(|(i, &w)| match self.words[w as usize] {
                WordKind::Regular { target } | WordKind::Marker { target } => target,
                WordKind::Ambiguous {
                    default,
                    alternative,
                } => {
                    if self.marker_after(source, i).is_some() {
                        alternative
                    } else {
                        default
                    }
                }
            })
            .collect()
    }
}

/// Per-occurrence ambiguity parameters `(m, s)`: initial correct-sense mass
/// and stickiness. Derived from the source prefix up to and including the
/// ambiguous word, so they are stable across chunks.
pub fn ambiguity_params(seed: u64, sticky_prior: f64, source_upto: &[u32]) -> (f64, f64) {
    let mut h = splitmix(seed ^ 0xa5a5_a5a5_0000_0000);
    for &w in source_upto {
        h = splitmix(h ^ u64::from(w));
    }
    let u1 = unit(h);
    let u2 = unit(splitmix(h));
    let m = 0.1 + 0.2 * u1;
    let s = (sticky_prior + 0.3 * (u2 - 0.5)).clamp(0.01, 0.99);
    (m, s)
}

/// Base (pre-noise) wrong-sense mass of an ambiguous word. `words_after_marker`
/// is `None` while the marker has not been received.
pub fn wrong_sense_mass(m: f64, s: f64, words_after_marker: Option<usize>) -> f64 {
    match words_after_marker {
        None => 1.0 - m,
        Some(e) => (1.0 - m) * (s + (1.0 - s) * STICKY_DECAY.powi(e as i32 + 1)),
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UtteranceMeta {
    pub source_words: Vec<u32>,
    pub ambiguous_positions: Vec<usize>,
    pub marker_positions: Vec<usize>,
    /// Ambiguous positions whose full-context argmax is the wrong sense.
    pub argmax_wrong_positions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub frames: SourcePrefix,
    pub reference: Vec<TokenId>,
    pub meta: UtteranceMeta,
}

impl Utterance {
    pub fn duration_ms(&self) -> f64 {
        self.frames.duration_ms()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub tokens: usize,
    pub ambiguous_tokens: usize,
    pub ambiguous_fraction: f64,
    /// Fraction of ambiguous positions that are argmax-wrong under full context.
    pub argmax_wrong_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub task: TaskSpec,
    pub stats: CorpusStats,
    pub utterances: Vec<Utterance>,
}

/// Generates a corpus; deterministic for a fixed spec.
pub fn generate(spec: &TaskSpec) -> Result<Corpus> {
    spec.validate()?;
    let lexicon = Lexicon::build(spec.vocab_size, spec.seed);
    let model = SyntheticModel::new(spec.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (lo, hi) = spec.source_len_range;
    let g = spec.frames_per_token as usize;

    let mut utterances = Vec::with_capacity(spec.utterance_count);
    let mut stats = CorpusStats::default();
    let mut wrong = 0usize;
    for u in 0..spec.utterance_count {
        let len = rng.gen_range(lo..=hi);
        let source = sample_source(&lexicon, spec.ambiguity_rate, len, &mut rng);
        let reference = lexicon.translate(&source);

        let mut meta = UtteranceMeta {
            source_words: source.clone(),
            ..Default::default()
        };
        for (i, &w) in source.iter().enumerate() {
            match lexicon.kind(w) {
                Some(WordKind::Ambiguous { .. }) => {
                    meta.ambiguous_positions.push(i);
                    let dist = model.word_distribution(&source, i);
                    if dist.argmax() != reference[i] {
                        meta.argmax_wrong_positions.push(i);
                    }
                }
                Some(WordKind::Marker { .. }) => meta.marker_positions.push(i),
                _ => {}
            }
        }
        stats.tokens += len;
        stats.ambiguous_tokens += meta.ambiguous_positions.len();
        wrong += meta.argmax_wrong_positions.len();

        let frames = source
            .iter()
            .flat_map(|&w| std::iter::repeat_n(w, g))
            .collect();
        utterances.push(Utterance {
            id: format!("utt-{u:05}"),
            frames: SourcePrefix::new(frames, spec.frame_ms)?,
            reference,
            meta,
        });
    }
    if stats.tokens > 0 {
        stats.ambiguous_fraction = stats.ambiguous_tokens as f64 / stats.tokens as f64;
    }
    if stats.ambiguous_tokens > 0 {
        stats.argmax_wrong_fraction = wrong as f64 / stats.ambiguous_tokens as f64;
    }
    Ok(Corpus {
        task: spec.clone(),
        stats,
        utterances,
    })
}

fn sample_source(lexicon: &Lexicon, rate: f64, len: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
    #[derive(Clone, Copy, PartialEq)]
    enum Slot {
        Regular,
        Ambiguous,
        Marker,
    }
    let mut slots = vec![Slot::Regular; len];
    // the last word has no room for a following marker
    for slot in slots.iter_mut().take(len.saturating_sub(1)) {
        if rng.gen::<f64>() < rate {
            *slot = Slot::Ambiguous;
        }
    }
    for i in 0..len {
        if slots[i] != Slot::Ambiguous {
            continue;
        }
        let end = (i + DISAMBIGUATION_WINDOW).min(len - 1);
        if (i + 1..=end).any(|q| slots[q] == Slot::Marker) {
            continue;
        }
        let free: Vec<usize> = (i + 1..=end).filter(|&q| slots[q] == Slot::Regular).collect();
        let q = if free.is_empty() {
            rng.gen_range(i + 1..=end)
        } else {
            free[rng.gen_range(0..free.len())]
        };
        slots[q] = Slot::Marker;
    }
    slots
        .into_iter()
        .map(|slot| {
            let pool = match slot {
                Slot::Regular => lexicon.regular_words(),
                Slot::Ambiguous => lexicon.ambiguous_words(),
                Slot::Marker => lexicon.marker_words(),
            };
            pool[rng.gen_range(0..pool.len())]
        })
        .collect()
}

/// Encoder state of the synthetic model: the completely received source words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticState {
    pub words: Vec<u32>,
}

/// Closed-form model for the synthetic task.
#[derive(Debug, Clone)]
pub struct SyntheticModel {
    spec: TaskSpec,
    lexicon: Lexicon,
    vocab: Vocabulary,
}

impl SyntheticModel {
    pub fn new(spec: TaskSpec) -> Result<Self> {
        spec.validate()?;
        let lexicon = Lexicon::build(spec.vocab_size, spec.seed);
        let mut surfaces = vec!["<s>".to_string(), "</s>".to_string()];
        surfaces.extend((2..spec.vocab_size).map(|i| format!("t{i}")));
        let vocab = Vocabulary::new(surfaces, BOS, EOS)?;
        Ok(Self {
            spec,
            lexicon,
            vocab,
        })
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    /// Pre-noise mass of `(wrong, correct)` senses for the ambiguous word at
    /// `pos`, given the received words.
    pub fn sense_masses(&self, received: &[u32], pos: usize) -> (f64, f64) {
        let (m, s) = ambiguity_params(self.spec.seed, self.spec.sticky_prior, &received[..=pos]);
        let after = self
            .lexicon
            .marker_after(received, pos)
            .map(|q| received.len() - 1 - q);
        let wrong = wrong_sense_mass(m, s, after);
        (wrong, 1.0 - wrong)
    }

    /// Output distribution for target position `pos` given received source words.
    pub fn word_distribution(&self, received: &[u32], pos: usize) -> ProbDist {
        let v = self.spec.vocab_size;
        let mut base = vec![0.0; v];
        if pos >= received.len() {
            base[EOS as usize] = 1.0;
        } else {
            match self.lexicon.words[received[pos] as usize] {
                WordKind::Regular { target } | WordKind::Marker { target } => {
                    base[target as usize] = 1.0;
                }
                WordKind::Ambiguous {
                    default,
                    alternative,
                } => {
                    let (wrong, correct) = self.sense_masses(received, pos);
                    base[default as usize] = wrong;
                    base[alternative as usize] = correct;
                }
            }
        }
        let floor = NOISE_MASS / (v - 1) as f64;
        let probs: Vec<f64> = base
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                if i as TokenId == BOS {
                    0.0
                } else {
                    (1.0 - NOISE_MASS) * b + floor
                }
            })
            .collect();
        let total: f64 = probs.iter().sum();
        ProbDist::new(probs.into_iter().map(|p| p / total).collect())
            .expect("synthetic distribution is normalized by construction")
    }

    /// Discretized Gaussian over received frames centred on the middle of
    /// source word `pos`.
    pub fn attention(&self, frames_seen: usize, pos: usize) -> AttentionRow {
        if frames_seen == 0 {
            return AttentionRow::new(Vec::new()).expect("empty row");
        }
        let g = self.spec.frames_per_token as f64;
        let center = pos as f64 * g + g / 2.0;
        let sigma = self.spec.attn_spread * g;
        let logits: Vec<f64> = (0..frames_seen)
            .map(|k| {
                let d = k as f64 + 0.5 - center;
                -d * d / (2.0 * sigma * sigma)
            })
            .collect();
        let peak = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|l| (l - peak).exp()).collect();
        let total: f64 = weights.iter().sum();
        AttentionRow::new(weights.into_iter().map(|w| w / total).collect())
            .expect("attention is normalized by construction")
    }
}

impl TranslationModel for SyntheticModel {
    type State = SyntheticState;

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn encode(&self, prefix: &SourcePrefix) -> EncoderHandle<SyntheticState> {
        let g = self.spec.frames_per_token as usize;
        let words = prefix.frames.chunks_exact(g).map(|c| c[0]).collect();
        EncoderHandle::new(prefix.len(), SyntheticState { words })
    }

    fn decode_step(
        &self,
        handle: &EncoderHandle<SyntheticState>,
        target_prefix: &[TokenId],
    ) -> Result<(ProbDist, AttentionRow)> {
        check_target_prefix(&self.vocab, target_prefix)?;
        let pos = target_prefix.len() - 1;
        Ok((
            self.word_distribution(&handle.state().words, pos),
            self.attention(handle.frames_seen(), pos),
        ))
    }
}

#[derive(Serialize, Deserialize)]
struct CorpusHeader {
    task: TaskSpec,
    stats: CorpusStats,
}

#[derive(Serialize, Deserialize)]
struct UtteranceRecord {
    id: String,
    frames: Vec<u32>,
    frame_ms: u32,
    reference: Vec<TokenId>,
    metadata: UtteranceMeta,
}

/// Writes the corpus as JSON lines: one header object with the task spec,
/// then one object per utterance.
pub fn write_corpus<W: Write>(corpus: &Corpus, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    let header = CorpusHeader {
        task: corpus.task.clone(),
        stats: corpus.stats.clone(),
    };
    serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    for u in &corpus.utterances {
        let rec = UtteranceRecord {
            id: u.id.clone(),
            frames: u.frames.frames.clone(),
            frame_ms: u.frames.frame_ms,
            reference: u.reference.clone(),
            metadata: u.meta.clone(),
        };
        serde_json::to_writer(&mut out, &rec).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    write_corpus(corpus, File::create(path)?)
}

/// Reads a corpus file, reporting the 1-based line of the first bad record.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::Input {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    let input_err = |line: usize, message: String| Error::Input {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut lines = BufReader::new(file).lines().enumerate();
    let header: CorpusHeader = match lines.next() {
        Some((_, line)) => {
            let line = line?;
            serde_json::from_str(&line).map_err(|e| input_err(1, format!("bad header: {e}")))?
        }
        None => return Err(input_err(1, "empty corpus file".into())),
    };
    header
        .task
        .validate()
        .map_err(|e| input_err(1, e.to_string()))?;
    let lexicon = Lexicon::build(header.task.vocab_size, header.task.seed);

    let mut utterances = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: UtteranceRecord =
            serde_json::from_str(&line).map_err(|e| input_err(line_no, e.to_string()))?;
        if rec.frame_ms != header.task.frame_ms {
            return Err(input_err(line_no, "frame_ms differs from task header".into()));
        }
        if let Some(bad) = rec
            .frames
            .iter()
            .find(|&&w| w as usize >= lexicon.word_count())
        {
            return Err(input_err(line_no, format!("unknown frame symbol {bad}")));
        }
        if let Some(bad) = rec
            .reference
            .iter()
            .find(|&&t| t as usize >= header.task.vocab_size)
        {
            return Err(input_err(line_no, format!("reference token {bad} out of range")));
        }
        utterances.push(Utterance {
            id: rec.id,
            frames: SourcePrefix::new(rec.frames, rec.frame_ms)
                .map_err(|e| input_err(line_no, e.to_string()))?,
            reference: rec.reference,
            meta: rec.metadata,
        });
    }
    Ok(Corpus {
        task: header.task,
        stats: header.stats,
        utterances,
    })
}
