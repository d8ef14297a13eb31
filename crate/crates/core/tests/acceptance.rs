//! Acceptance suite. Each criterion prints one PASS/FAIL line; the test fails
//! if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{oracles, TableModel};
use simulcfm::beam::{beam_decode, BeamConfig};
use simulcfm::cfm::{cfm_score, contrast, plausible_set, CfmConfig};
use simulcfm::domain::{floored_ln, normalize, AttentionRow, EmissionEvent, ProbDist, TokenId};
use simulcfm::engine::{step_chunk, Clock, EngineConfig, StreamState, TokenCap};
use simulcfm::harness::{self, run_corpus, RunConfig, RunOutput, Settings};
use simulcfm::metrics::{bootstrap_ci, corpus_bleu, laal, LatencyRecord};
use simulcfm::model::{SourcePrefix, TranslationModel};
use simulcfm::policies::{decide, Continuation, PolicyConfig};
use simulcfm::synthetic::{generate, Corpus, SyntheticModel, TaskSpec, WordKind, EOS};

type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn random_dist(rng: &mut ChaCha8Rng, v: usize) -> ProbDist {
    let style = rng.gen_range(0..4);
    let raw: Vec<f64> = (0..v)
        .map(|_| match style {
            0 => rng.gen::<f64>(),
            1 => rng.gen::<f64>().powi(8),
            2 => {
                if rng.gen_bool(0.3) {
                    0.0
                } else {
                    rng.gen::<f64>()
                }
            }
            _ => 10f64.powf(-rng.gen_range(0.0..12.0)),
        })
        .collect();
    if raw.iter().all(|&x| x == 0.0) {
        return ProbDist::uniform(v);
    }
    normalize(&raw).unwrap()
}

// ---------------------------------------------------------------- 1

fn criterion_1() -> Check {
    let nat = contrast(1e-3, 1e-9, 1e-12);
    ensure(close(nat, 1e6f64.ln(), 1e-9), || format!("natural-log contrast {nat}"))?;
    let base10 = nat / 10f64.ln();
    ensure(close(base10, 6.0, 1e-9), || format!("base-10 contrast {base10}"))?;

    let p = ProbDist::new(vec![0.5, 0.3, 0.15, 0.04, 0.01]).unwrap();
    ensure(plausible_set(&p, 0.1) == vec![0, 1, 2], || "worked V_beta example".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..1000 {
        let v = rng.gen_range(2..60);
        let p = random_dist(&mut rng, v);
        let beta = if i % 10 == 0 { 1.0 } else { rng.gen_range(0.001..1.0) };
        let got = plausible_set(&p, beta);
        let want = oracles::plausible(p.probs(), beta);
        ensure(got == want, || format!("instance {i}: {got:?} vs {want:?}"))?;
    }
    Ok(())
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let cfg = CfmConfig::default();
    for i in 0..10_000 {
        let v = rng.gen_range(2..50);
        let pc = random_dist(&mut rng, v);
        let pf = random_dist(&mut rng, v);
        let vb = plausible_set(&pc, cfg.beta);
        let in_vb = |y: usize| vb.contains(&(y as TokenId));
        let p = pc.probs();

        // plausibility guard and argmax membership
        let scores = cfm_score(&pc, &pf, &cfg);
        ensure(in_vb(pc.argmax() as usize), || format!("{i}: argmax outside V_beta"))?;
        for (y, s) in scores.iter().enumerate() {
            ensure(in_vb(y) == s.is_finite(), || format!("{i}: token {y} score {s}"))?;
        }
        let best = (0..v).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
        ensure(in_vb(best), || format!("{i}: CFM picked token outside V_beta"))?;

        // uniform feedback: 2 ln p_c + ln V on V_beta, same ranking as p_c
        let uni = cfm_score(&pc, &ProbDist::uniform(v), &cfg);
        for &y in &vb {
            let y = y as usize;
            let want = 2.0 * floored_ln(p[y]) + (v as f64).ln();
            ensure(close(uni[y], want, 1e-9), || format!("{i}: uniform score {y}"))?;
            for &z in &vb {
                let z = z as usize;
                let same = (p[y] > p[z]) == (uni[y] > uni[z]) && (p[y] == p[z]) == (uni[y] == uni[z]);
                ensure(same, || format!("{i}: uniform ranking {y} vs {z}"))?;
            }
        }

        // identical feedback: zero contrast
        let ident = cfm_score(&pc, &pc, &cfg);
        for &y in &vb {
            let y = y as usize;
            ensure(close(ident[y], floored_ln(p[y]), 1e-12), || format!("{i}: identity {y}"))?;
        }

        // log-base invariance of the ranking
        for base in [2.0f64, 10.0, 3f64.exp()] {
            let other: Vec<f64> = (0..v)
                .map(|y| {
                    if in_vb(y) {
                        2.0 * p[y].log(base) - pf.probs()[y].max(cfg.feedback_floor).log(base)
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            for &y in &vb {
                let y = y as usize;
                let scaled = scores[y] / base.ln();
                ensure(close(other[y], scaled, 1e-9 * (1.0 + scaled.abs())), || {
                    format!("{i}: base {base} token {y}")
                })?;
                for &z in &vb {
                    let z = z as usize;
                    if (scores[y] - scores[z]).abs() > 1e-9 {
                        ensure((scores[y] > scores[z]) == (other[y] > other[z]), || {
                            format!("{i}: base {base} ranking {y} vs {z}")
                        })?;
                    }
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- 3

fn random_rows(rng: &mut ChaCha8Rng, len: usize, frames: usize) -> Vec<AttentionRow> {
    (0..len)
        .map(|_| {
            if frames == 0 {
                return AttentionRow::new(Vec::new()).unwrap();
            }
            // small integer weights make argmax ties common
            let mut w: Vec<f64> = (0..frames).map(|_| rng.gen_range(0..5) as f64).collect();
            if w.iter().all(|&x| x == 0.0) {
                w[rng.gen_range(0..frames)] = 1.0;
            }
            let t: f64 = w.iter().sum();
            AttentionRow::new(w.iter().map(|x| x / t).collect()).unwrap()
        })
        .collect()
}

fn random_continuation(rng: &mut ChaCha8Rng, frames: usize) -> Continuation {
    let len = rng.gen_range(0..9);
    let tokens: Vec<TokenId> = (0..len)
        .map(|_| if rng.gen_bool(0.1) { EOS } else { rng.gen_range(2..6) })
        .collect();
    let dists = (0..len).map(|_| random_dist(rng, 6)).collect();
    Continuation::new(tokens, dists, random_rows(rng, len, frames)).unwrap()
}

fn check_split(name: &str, i: usize, c: &Continuation, stable: usize, d: &simulcfm::domain::PolicyDecision) -> Check {
    ensure(d.stable == c.tokens[..stable], || {
        format!("{name} {i}: stable {:?}, oracle length {stable} of {:?}", d.stable, c.tokens)
    })?;
    let ids = d.unstable_ids();
    ensure(ids == c.tokens[stable..], || format!("{name} {i}: unstable {ids:?}"))?;
    let dists_ok = d.unstable.iter().zip(&c.dists[stable..]).all(|((_, a), b)| a == b);
    ensure(dists_ok, || format!("{name} {i}: unstable distributions"))
}

fn criterion_3() -> Check {
    // hand-traced examples
    let toks = |t: &[TokenId]| Continuation::new(t.to_vec(), vec![ProbDist::uniform(8); t.len()], vec![AttentionRow::new(vec![1.0]).unwrap(); t.len()]).unwrap();
    let la = |prev: &[TokenId], curr: &[TokenId]| decide(&PolicyConfig::LocalAgreement, Some(prev), &toks(curr), 1, EOS, false);
    ensure(la(&[2, 3, 4], &[2, 3, 5]).stable == [2, 3], || "LA [x,y,z]/[x,y,w]".into())?;
    ensure(la(&[2, 3, 4], &[2, 3, 4]).unstable.is_empty(), || "LA identity".into())?;
    ensure(la(&[6, 3], &[7, 3]).stable.is_empty(), || "LA disjoint".into())?;
    let hold = |n| decide(&PolicyConfig::HoldN { n }, None, &toks(&[2, 3, 4, 5, 6]), 1, EOS, false).stable.len();
    ensure(hold(2) == 3 && hold(0) == 5 && hold(7) == 0, || "Hold-n examples".into())?;
    let one_hot = |at: usize| {
        let mut w = vec![0.0; 20];
        w[at] = 1.0;
        AttentionRow::new(w).unwrap()
    };
    let c = Continuation::new(vec![2, 3, 4], vec![ProbDist::uniform(8); 3], vec![one_hot(3), one_hot(10), one_hot(18)]).unwrap();
    let aa = |f| decide(&PolicyConfig::AlignAtt { f }, None, &c, 20, EOS, false).stable.len();
    ensure(aa(4) == 2 && aa(0) == 3 && aa(20) == 0, || "AlignAtt examples".into())?;
    let tail_row = |s: f64| AttentionRow::new(vec![1.0 - s, s / 2.0, s / 2.0]).unwrap();
    let c = Continuation::new(vec![2, 3, 4], vec![ProbDist::uniform(8); 3], vec![tail_row(0.02), tail_row(0.05), tail_row(0.30)]).unwrap();
    let ed = |alpha| decide(&PolicyConfig::EdAtt { alpha, lambda: 2 }, None, &c, 3, EOS, false).stable.len();
    ensure(ed(0.1) == 2 && ed(1.0) == 3, || "EDAtt examples".into())?;
    let flush = decide(&PolicyConfig::LocalAgreement, None, &toks(&[2, 3, EOS]), 1, EOS, true);
    ensure(flush.stable == [2, 3] && flush.source_exhausted_flush, || "flush strips EOS".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for i in 0..10_000 {
        let frames = rng.gen_range(0..12);
        let c = random_continuation(&mut rng, frames);
        let mut prev: Vec<TokenId> = c.tokens.iter().take(rng.gen_range(0..=c.len())).copied().collect();
        if rng.gen_bool(0.5) {
            prev.push(rng.gen_range(1..6));
        }
        prev.extend((0..rng.gen_range(0..3)).map(|_| rng.gen_range(1..6) as TokenId));
        let d = decide(&PolicyConfig::LocalAgreement, Some(&prev), &c, frames, EOS, false);
        check_split("local_agreement", i, &c, oracles::local_agreement(&prev, &c.tokens, EOS), &d)?;
    }
    for i in 0..10_000 {
        let frames = rng.gen_range(0..12);
        let c = random_continuation(&mut rng, frames);
        let n = rng.gen_range(0..11);
        let d = decide(&PolicyConfig::HoldN { n }, None, &c, frames, EOS, false);
        check_split("hold_n", i, &c, oracles::hold_n(&c.tokens, n, EOS), &d)?;
    }
    for i in 0..10_000 {
        let frames = rng.gen_range(0..12);
        let c = random_continuation(&mut rng, frames);
        let f = rng.gen_range(0..frames + 3);
        let rows: Vec<Vec<f64>> = c.attn.iter().map(|r| r.weights().to_vec()).collect();
        let d = decide(&PolicyConfig::AlignAtt { f }, None, &c, frames, EOS, false);
        check_split("alignatt", i, &c, oracles::alignatt(&c.tokens, &rows, f, frames, EOS), &d)?;
    }
    for i in 0..10_000 {
        let frames = rng.gen_range(1..12);
        let c = random_continuation(&mut rng, frames);
        let alpha = if i % 7 == 0 { 1.0 } else { rng.gen_range(0.01..1.0) };
        let lambda = rng.gen_range(1..5);
        let rows: Vec<Vec<f64>> = c.attn.iter().map(|r| r.weights().to_vec()).collect();
        let d = decide(&PolicyConfig::EdAtt { alpha, lambda }, None, &c, frames, EOS, false);
        check_split("edatt", i, &c, oracles::edatt(&c.tokens, &rows, alpha, lambda, EOS), &d)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- 4 and 5

struct Runs {
    corpus: Corpus,
    cache: BTreeMap<String, RunOutput>,
}

impl Runs {
    fn new() -> Self {
        let corpus = generate(&TaskSpec::default()).expect("default corpus");
        Self {
            corpus,
            cache: BTreeMap::new(),
        }
    }

    fn get(&mut self, pairs: &[(&str, &str)]) -> &RunOutput {
        let settings: Settings = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        let key = format!("{settings:?}");
        if !self.cache.contains_key(&key) {
            let cfg = RunConfig::from_settings(&settings).expect("valid settings");
            let out = run_corpus(&cfg, &self.corpus).expect("run");
            self.cache.insert(key.clone(), out);
        }
        &self.cache[&key]
    }
}

fn criterion_4(runs: &mut Runs) -> Check {
    ensure(runs.corpus.utterances.len() == 500, || "corpus size".into())?;
    let mut notes = Vec::new();

    let mut prev = f64::NEG_INFINITY;
    for f in ["2", "4", "8", "16"] {
        let l = runs.get(&[("policy", "alignatt"), ("f", f)]).summary.laal_ideal;
        ensure(l >= prev, || format!("AlignAtt LAAL {l} at f={f} below {prev}"))?;
        notes.push(format!("f={f}:{l:.1}"));
        prev = l;
    }
    // alpha descends along the grid, so latency may only grow
    let mut prev = f64::NEG_INFINITY;
    for a in ["0.6", "0.2", "0.05"] {
        let l = runs.get(&[("policy", "edatt"), ("alpha", a)]).summary.laal_ideal;
        ensure(l >= prev, || format!("EDAtt LAAL {l} at alpha={a} below {prev} at a larger alpha"))?;
        notes.push(format!("alpha={a}:{l:.1}"));
        prev = l;
    }
    for cfm in ["on", "off"] {
        let mut prev: Option<(f64, f64)> = None;
        for chunk in ["200", "400", "1000", "2000"] {
            let s = &runs.get(&[("policy", "local_agreement"), ("chunk_ms", chunk), ("cfm", cfm)]).summary;
            if let Some((laal_prev, ci_low_prev)) = prev {
                ensure(s.laal_ideal >= laal_prev, || format!("LA LAAL drops at {chunk} ms (cfm {cfm})"))?;
                // non-decreasing within noise: never below the previous interval
                ensure(s.bleu >= ci_low_prev, || format!("LA BLEU {} at {chunk} ms below noise band (cfm {cfm})", s.bleu))?;
            }
            notes.push(format!("LA{chunk}/{cfm}:{:.1}/{:.2}", s.laal_ideal, s.bleu));
            prev = Some((s.laal_ideal, s.bleu_ci_low));
        }
    }
    println!("    {}", notes.join(" "));
    Ok(())
}

fn stream_words(model: &SyntheticModel, source: &[u32], cfm: bool) -> Result<StreamState, String> {
    let g = model.spec().frames_per_token as usize;
    let engine = EngineConfig {
        policy: PolicyConfig::LocalAgreement,
        beam: BeamConfig::default(),
        cfm: if cfm { CfmConfig::default() } else { CfmConfig::disabled() },
        cap: TokenCap::PerSource { frames_per_token: g, slack: 10 },
    };
    let mut state = StreamState::new(model.spec().frame_ms, Clock::Ideal).map_err(|e| e.to_string())?;
    for (i, &w) in source.iter().enumerate() {
        let chunk = vec![w; g];
        step_chunk(&mut state, &chunk, model, &engine, i + 1 == source.len()).map_err(|e| e.to_string())?;
    }
    Ok(state)
}

/// A short utterance, streamed one word per chunk under Local Agreement,
/// whose ambiguous first word is argmax-wrong even with full context but is
/// emitted with the correct sense once CFM rescoring is on.
fn constructed_flip(model: &SyntheticModel) -> Result<(Vec<u32>, StreamState, StreamState), String> {
    let lex = model.lexicon();
    for &amb in lex.ambiguous_words() {
        let Some(WordKind::Ambiguous { default, alternative }) = lex.kind(amb) else {
            continue;
        };
        for &marker in lex.marker_words() {
            for &filler in lex.regular_words() {
                let source = vec![amb, marker, filler, filler];
                if model.word_distribution(&source, 0).argmax() != default {
                    continue;
                }
                let on = stream_words(model, &source, true)?;
                let off = stream_words(model, &source, false)?;
                if on.emitted[0] == alternative && off.emitted[0] == default {
                    return Ok((source, on, off));
                }
            }
        }
    }
    Err("no constructed flip found".into())
}

fn criterion_5(runs: &mut Runs) -> Check {
    // the worked three-token flip
    let pc = ProbDist::new(vec![0.7, 0.2, 0.1]).unwrap();
    let pf = ProbDist::new(vec![0.7, 0.05, 0.25]).unwrap();
    let s = cfm_score(&pc, &pf, &CfmConfig::default());
    let want = [-0.3567, -0.2231, -3.2189];
    ensure(s.iter().zip(want).all(|(a, b)| close(*a, b, 1e-4)), || format!("flip scores {s:?}"))?;
    ensure(pc.argmax() == 0 && s[1] > s[0] && s[1] > s[2], || "flip argmax".into())?;

    // the same flip on a synthetic utterance: the marker arrives with chunk 2,
    // where only the rescored first step moves to the correct sense
    let model = SyntheticModel::new(runs.corpus.task.clone()).map_err(|e| e.to_string())?;
    let (source, on, off) = constructed_flip(&model)?;
    let reference = model.lexicon().translate(&source);
    ensure(on.emitted == reference, || format!("CFM on emitted {:?}, reference {reference:?}", on.emitted))?;
    ensure(on.chunks[1].feedback_applied && on.chunks[1].hypothesis[0] == reference[0], || "flip not at the marker chunk".into())?;
    ensure(off.chunks[1].hypothesis[0] != reference[0], || "plain decoding already correct".into())?;

    let mut notes = vec![format!("constructed source {source:?}")];
    for (policy, param) in [("local_agreement", None), ("alignatt", Some(("f", "8"))), ("edatt", Some(("alpha", "0.2")))] {
        let mut row = |cfm: &'static str| {
            let mut pairs = vec![("policy", policy), ("chunk_ms", "1000"), ("cfm", cfm)];
            pairs.extend(param);
            runs.get(&pairs).summary.clone()
        };
        let on = row("on");
        let off = row("off");
        let increase = (on.laal_ideal - off.laal_ideal) / off.laal_ideal;
        notes.push(format!(
            "{policy}: bleu {:.2} vs {:.2}, laal {:.1} vs {:.1} ({:+.1}%)",
            on.bleu,
            off.bleu,
            on.laal_ideal,
            off.laal_ideal,
            100.0 * increase
        ));
        ensure(on.bleu >= off.bleu, || format!("{policy}: BLEU on {} < off {}", on.bleu, off.bleu))?;
        ensure(increase <= 0.05, || format!("{policy}: LAAL increase {:.2}%", 100.0 * increase))?;
    }
    for n in notes {
        println!("    {n}");
    }
    Ok(())
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Check {
    // tokens: 0 BOS, 1 EOS, 2..5 words; two frames per chunk
    let mut m = TableModel::new(6);
    m.set(2, &[0], &[0.0, 0.02, 0.9, 0.04, 0.02, 0.02]);
    m.set(2, &[0, 2], &[0.0, 0.02, 0.02, 0.9, 0.04, 0.02]);
    m.set(4, &[0], &[0.0, 0.01, 0.95, 0.02, 0.01, 0.01]);
    m.set(4, &[0, 2], &[0.0, 0.04, 0.0, 0.3, 0.6, 0.06]);
    m.set(6, &[0, 2], &[0.0, 0.02, 0.0, 0.45, 0.5, 0.03]);
    m.set(6, &[0, 2, 3], &[0.0, 0.2, 1.0 / 30.0, 1.0 / 30.0, 1.0 / 30.0, 0.7]);
    m.set(6, &[0, 2, 4], &[0.0, 0.95, 0.0125, 0.0125, 0.0125, 0.0125]);

    // hand-evaluated first-step scores of chunks 2 and 3
    let cfg = CfmConfig::default();
    let s2 = cfm_score(&m.decode_step(&m.encode(&SourcePrefix::new(vec![0; 4], 40).unwrap()), &[0]).unwrap().0, &ProbDist::new(vec![0.0, 0.02, 0.9, 0.04, 0.02, 0.02]).unwrap(), &cfg);
    ensure(close(s2[2], 0.00277, 1e-5) && s2.iter().filter(|s| s.is_finite()).count() == 1, || format!("chunk 2 scores {s2:?}"))?;
    let s3 = cfm_score(&ProbDist::new(vec![0.0, 0.02, 0.0, 0.45, 0.5, 0.03]).unwrap(), &ProbDist::new(vec![0.0, 0.04, 0.0, 0.3, 0.6, 0.06]).unwrap(), &cfg);
    ensure(close(s3[3], -0.39305, 1e-5) && close(s3[4], -0.87547, 1e-5), || format!("chunk 3 scores {s3:?}"))?;

    let engine = |cfm: bool| EngineConfig {
        policy: PolicyConfig::LocalAgreement,
        beam: BeamConfig { beam_size: 5, max_new_tokens: 6, length_norm_alpha: 1.0 },
        cfm: if cfm { CfmConfig::default() } else { CfmConfig::disabled() },
        cap: TokenCap::Fixed,
    };
    let chunk = [7u32, 7];

    let mut st = StreamState::new(40, Clock::Ideal).unwrap();
    let on = engine(true);
    let r1 = step_chunk(&mut st, &chunk, &m, &on, false).map_err(|e| e.to_string())?;
    ensure(r1.hypothesis == [2, 3, EOS] && r1.stable.is_empty() && !r1.feedback_applied, || format!("chunk 1 {r1:?}"))?;
    ensure(st.feedback.dist.as_ref().map(|d| d.probs().to_vec()) == Some(vec![0.0, 0.02, 0.9, 0.04, 0.02, 0.02]), || "feedback after chunk 1".into())?;
    let r2 = step_chunk(&mut st, &chunk, &m, &on, false).map_err(|e| e.to_string())?;
    ensure(r2.hypothesis == [2, 4, EOS] && r2.stable == [2] && r2.unstable == [4, EOS] && r2.feedback_applied, || format!("chunk 2 {r2:?}"))?;
    ensure(st.feedback.dist.as_ref().map(|d| d.probs().to_vec()) == Some(vec![0.0, 0.04, 0.0, 0.3, 0.6, 0.06]), || "feedback after chunk 2".into())?;
    let r3 = step_chunk(&mut st, &chunk, &m, &on, true).map_err(|e| e.to_string())?;
    ensure(r3.hypothesis == [3, 5, EOS] && r3.stable == [3, 5] && r3.unstable.is_empty() && r3.feedback_applied, || format!("chunk 3 {r3:?}"))?;
    ensure(st.feedback.dist.is_none() && st.is_closed(), || "stream not closed".into())?;
    let schedule: Vec<(TokenId, f64)> = st.events.iter().map(|e| (e.token, e.ideal_delay_ms)).collect();
    ensure(schedule == [(2, 160.0), (3, 240.0), (5, 240.0)], || format!("schedule {schedule:?}"))?;

    // without feedback the last chunk keeps the plain argmax
    let mut off_state = StreamState::new(40, Clock::Ideal).unwrap();
    let off = engine(false);
    for (i, fin) in [false, false, true].into_iter().enumerate() {
        let r = step_chunk(&mut off_state, &chunk, &m, &off, fin).map_err(|e| e.to_string())?;
        ensure(!r.feedback_applied, || format!("cfm off applied feedback at chunk {i}"))?;
    }
    ensure(off_state.emitted == [2, 4], || format!("cfm off emitted {:?}", off_state.emitted))
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Check {
    let ev = |d: &[f64]| -> Vec<EmissionEvent> {
        d.iter()
            .map(|&x| EmissionEvent { token: 2, ideal_delay_ms: x, wall_ms: x })
            .collect()
    };
    let rec = |d: &[f64], t: f64, r: usize| LatencyRecord { events: ev(d), source_duration_ms: t, ref_len: r };
    let cases = [
        (rec(&[1000.0, 2000.0, 3000.0, 4000.0], 4000.0, 4), 1000.0),
        (rec(&[4000.0; 4], 4000.0, 4), 4000.0),
        (rec(&[2500.0], 2500.0, 1), 2500.0),
    ];
    for (i, (r, want)) in cases.iter().enumerate() {
        let got = laal(r, false).map_err(|e| e.to_string())?;
        ensure(close(got, *want, 1e-6), || format!("LAAL example {i}: {got}"))?;
    }
    let bleu = corpus_bleu(&[vec![2, 3, 4, 5]], &[vec![2, 3, 4, 6]]).map_err(|e| e.to_string())?;
    let hand = 100.0 * (0.75f64 * (2.0 / 3.0) * 0.5 * 0.5).powf(0.25);
    ensure(close(bleu, hand, 1e-9) && close(bleu, 59.46, 0.01), || format!("BLEU {bleu}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let refs: Vec<Vec<TokenId>> = (0..40).map(|_| (0..rng.gen_range(3..12)).map(|_| rng.gen_range(2..9)).collect()).collect();
    let hyps: Vec<Vec<TokenId>> = refs.iter().map(|r| r.iter().map(|&t| if rng.gen_bool(0.2) { 9 } else { t }).collect()).collect();
    let a = bootstrap_ci(&hyps, &refs, 200, 5, 0.95).map_err(|e| e.to_string())?;
    let b = bootstrap_ci(&hyps, &refs, 200, 5, 0.95).map_err(|e| e.to_string())?;
    ensure(a == b, || format!("CI not deterministic: {a:?} vs {b:?}"))?;
    let same = bootstrap_ci(&refs, &refs, 100, 5, 0.95).map_err(|e| e.to_string())?;
    ensure(same == (100.0, 100.0), || format!("identity CI {same:?}"))
}

// ---------------------------------------------------------------- 8

/// Engine loop with no feedback state at all, as an oracle for CFM-off runs.
fn feedback_free_stream(model: &SyntheticModel, frames: &SourcePrefix, chunk: usize, policy: &PolicyConfig) -> Vec<(Vec<TokenId>, Vec<TokenId>, Vec<TokenId>)> {
    let g = model.spec().frames_per_token as usize;
    let mut emitted: Vec<TokenId> = Vec::new();
    let mut prev: Option<Vec<TokenId>> = None;
    let mut out = Vec::new();
    let pieces: Vec<&[u32]> = frames.frames.chunks(chunk).collect();
    let mut seen = Vec::new();
    for (i, piece) in pieces.iter().enumerate() {
        seen.extend_from_slice(piece);
        let handle = model.encode(&SourcePrefix::new(seen.clone(), frames.frame_ms).unwrap());
        let mut forced = vec![0];
        forced.extend(&emitted);
        let beam = BeamConfig { max_new_tokens: seen.len() / g + 10, ..BeamConfig::default() };
        let hyp = beam_decode(model, &handle, &forced, &beam, None).unwrap();
        let c = Continuation::from_hypothesis(&hyp);
        let d = decide(policy, prev.as_deref(), &c, seen.len(), EOS, i + 1 == pieces.len());
        emitted.extend(&d.stable);
        prev = Some(d.unstable_ids());
        out.push((c.tokens, d.stable.clone(), d.unstable_ids()));
    }
    out
}

fn criterion_8(runs: &mut Runs) -> Check {
    let model = SyntheticModel::new(runs.corpus.task.clone()).unwrap();
    let chunk = 1000 / runs.corpus.task.frame_ms as usize;
    let utterances = runs.corpus.utterances.clone();
    for (policy, param) in [("local_agreement", None), ("alignatt", Some(("f", "8"))), ("edatt", Some(("alpha", "0.2")))] {
        for cfm in ["on", "off"] {
            let mut pairs = vec![("policy", policy), ("chunk_ms", "1000"), ("cfm", cfm)];
            pairs.extend(param);
            let out = runs.get(&pairs).clone();
            let cfg = RunConfig::from_settings(&out.header.settings).unwrap();
            for (log, utt) in out.logs.iter().zip(&utterances) {
                // no retraction: the chunk emissions concatenate to the output
                let concat: Vec<TokenId> = log.chunks.iter().flat_map(|c| c.stable.clone()).collect();
                let events: Vec<TokenId> = log.events.iter().map(|e| e.token).collect();
                ensure(concat == log.hypothesis && events == log.hypothesis, || format!("{policy}/{cfm} {}: retraction", log.id))?;
                ensure(log.events.windows(2).all(|w| w[0].ideal_delay_ms <= w[1].ideal_delay_ms), || format!("{}: delays", log.id))?;
                ensure(!log.hypothesis.contains(&EOS), || format!("{}: EOS emitted", log.id))?;
                // first-chunk guard and final flush
                ensure(!log.chunks[0].feedback_applied, || format!("{}: CFM on first chunk", log.id))?;
                let last = log.chunks.last().unwrap();
                ensure(last.is_final && last.unstable.is_empty(), || format!("{}: final flush", log.id))?;
                if cfm == "off" {
                    ensure(log.chunks.iter().all(|c| !c.feedback_applied), || format!("{}: feedback applied with CFM off", log.id))?;
                    let oracle = feedback_free_stream(&model, &utt.frames, chunk, &cfg.policy);
                    let got: Vec<_> = log.chunks.iter().map(|c| (c.hypothesis.clone(), c.stable.clone(), c.unstable.clone())).collect();
                    ensure(got == oracle, || format!("{policy} {}: differs from feedback-free engine", log.id))?;
                }
            }
            // persistence round trip
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let path = dir.path().join("run.jsonl");
            harness::save_run_log(&out, &path).map_err(|e| e.to_string())?;
            let rescored = harness::score(&path).map_err(|e| e.to_string())?;
            ensure(rescored == out.summary, || format!("{policy}/{cfm}: rescored summary differs"))?;
        }
    }
    Ok(())
}

// ----------------------------------------------------------------

#[test]
fn acceptance_criteria() {
    let mut runs = Runs::new();
    let secs = Duration::from_secs;
    let mut results: Vec<(u32, &str, Option<Duration>, Check, Duration)> = Vec::new();
    let time = |f: &mut dyn FnMut() -> Check| {
        let t = Instant::now();
        let r = f();
        (r, t.elapsed())
    };

    let (r, d) = time(&mut criterion_1);
    results.push((1, "CFM math fidelity", Some(secs(1)), r, d));
    let (r, d) = time(&mut criterion_2);
    results.push((2, "rescoring invariances", Some(secs(5)), r, d));
    let (r, d) = time(&mut criterion_3);
    results.push((3, "policy oracle equivalence", Some(secs(10)), r, d));
    let (r, d) = time(&mut || criterion_4(&mut runs));
    results.push((4, "monotonic trade-off", Some(secs(120)), r, d));
    let (r, d) = time(&mut || criterion_5(&mut runs));
    results.push((5, "synthetic CFM ablation", Some(secs(300)), r, d));
    let (r, d) = time(&mut criterion_6);
    results.push((6, "scripted chunk trace", Some(secs(1)), r, d));
    let (r, d) = time(&mut criterion_7);
    results.push((7, "metric hand examples", Some(secs(1)), r, d));
    let (r, d) = time(&mut || criterion_8(&mut runs));
    results.push((8, "engine invariants", None, r, d));

    let mut failed = 0;
    for (n, name, limit, result, elapsed) in results {
        let over = limit.is_some_and(|l| elapsed > l);
        let verdict = match (&result, over) {
            (Ok(()), false) => "PASS".to_string(),
            (Ok(()), true) => format!("FAIL (took {:.2?}, limit {:.0?})", elapsed, limit.unwrap()),
            (Err(e), _) => format!("FAIL ({e})"),
        };
        if !verdict.starts_with("PASS") {
            failed += 1;
        }
        println!("criterion {n} [{name}]: {verdict} in {elapsed:.2?}");
    }
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
