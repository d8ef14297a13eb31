//! Experiment driver: single runs, sweeps with paired CFM ablations, and
//! re-scoring of persisted run logs.
//!
//! Run logs are JSON lines. A run starts with a header object carrying the
//! resolved settings, followed by one object per utterance. Several runs may
//! be concatenated into one file; scoring pools their utterances and takes
//! the labels and bootstrap settings from the first header.

pub mod config;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{EmissionEvent, TokenId};
use crate::engine::{translate_stream, ChunkRecord, Clock};
use crate::error::{Error, Result};
use crate::metrics::{bootstrap_ci, corpus_bleu, laal, LatencyRecord};
use crate::synthetic::{load_corpus, Corpus, SyntheticModel};

pub use config::{RunConfig, Settings, SweepConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub settings: Settings,
    /// False for measured-clock runs, whose wall delays vary between runs.
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceLog {
    pub id: String,
    pub source_duration_ms: f64,
    pub reference: Vec<TokenId>,
    pub hypothesis: Vec<TokenId>,
    pub events: Vec<EmissionEvent>,
    pub chunks: Vec<ChunkRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum LogLine {
    Header { header: LogHeader },
    Utterance(UtteranceLog),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub policy: String,
    pub param: String,
    pub chunk_ms: u32,
    pub cfm: bool,
    pub bleu: f64,
    pub bleu_ci_low: f64,
    pub bleu_ci_high: f64,
    pub laal_ideal: f64,
    pub laal_ca: f64,
    /// Fraction of non-final chunks that emitted nothing.
    pub stall_rate: f64,
    /// Longest run of consecutive non-final chunks without emission.
    pub max_stall_chunks: usize,
    pub utterances: usize,
    /// Utterances with no output at all; excluded from the LAAL means.
    pub empty_outputs: usize,
    pub clock: Clock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub header: LogHeader,
    pub logs: Vec<UtteranceLog>,
    pub summary: RunSummary,
}

/// Runs one configuration over an in-memory corpus.
pub fn run_corpus(cfg: &RunConfig, corpus: &Corpus) -> Result<RunOutput> {
    let model = SyntheticModel::new(corpus.task.clone())?;
    let chunk_frames = cfg.chunk_frames(corpus.task.frame_ms)?;
    let engine = cfg.engine_config(corpus.task.frames_per_token as usize);

    let translate = |u: &crate::synthetic::Utterance| -> Result<UtteranceLog> {
        let state = translate_stream(&model, &u.frames, chunk_frames, &engine, cfg.clock)?;
        Ok(UtteranceLog {
            id: u.id.clone(),
            source_duration_ms: u.duration_ms(),
            reference: u.reference.clone(),
            hypothesis: state.emitted,
            events: state.events,
            chunks: state.chunks,
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let logs = pool.install(|| {
        corpus
            .utterances
            .par_iter()
            .map(translate)
            .collect::<Result<Vec<_>>>()
    })?;

    let header = LogHeader {
        settings: cfg.to_settings(),
        deterministic: cfg.clock == Clock::Ideal,
    };
    let summary = summarize(&header, &logs)?;
    Ok(RunOutput {
        header,
        logs,
        summary,
    })
}

/// Loads the configured dataset and runs it.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    let corpus = load_corpus(&cfg.dataset_path)?;
    run_corpus(cfg, &corpus)
}

/// Computes the summary metrics from utterance logs alone.
pub fn summarize(header: &LogHeader, logs: &[UtteranceLog]) -> Result<RunSummary> {
    let cfg = RunConfig::from_settings(&header.settings)?;
    let hyps: Vec<Vec<TokenId>> = logs.iter().map(|l| l.hypothesis.clone()).collect();
    let refs: Vec<Vec<TokenId>> = logs.iter().map(|l| l.reference.clone()).collect();
    let bleu = corpus_bleu(&hyps, &refs)?;
    let (bleu_ci_low, bleu_ci_high) =
        bootstrap_ci(&hyps, &refs, cfg.resamples, cfg.seed, cfg.ci_level)?;

    let mut ideal = Vec::new();
    let mut ca = Vec::new();
    let mut empty = 0;
    for l in logs {
        if l.events.is_empty() {
            empty += 1;
            continue;
        }
        let rec = LatencyRecord {
            events: l.events.clone(),
            source_duration_ms: l.source_duration_ms,
            ref_len: l.reference.len(),
        };
        ideal.push(laal(&rec, false)?);
        ca.push(laal(&rec, true)?);
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };

    let mut non_final = 0usize;
    let mut stalled = 0usize;
    let mut max_stall = 0usize;
    for l in logs {
        let mut run = 0usize;
        for c in l.chunks.iter().filter(|c| !c.is_final) {
            non_final += 1;
            if c.stable.is_empty() {
                stalled += 1;
                run += 1;
                max_stall = max_stall.max(run);
            } else {
                run = 0;
            }
        }
    }

    Ok(RunSummary {
        policy: cfg.policy.kind().name().to_string(),
        param: cfg.policy.param_label(),
        chunk_ms: cfg.chunk_ms,
        cfm: cfg.cfm.enabled,
        bleu,
        bleu_ci_low,
        bleu_ci_high,
        laal_ideal: mean(&ideal),
        laal_ca: mean(&ca),
        stall_rate: if non_final == 0 {
            0.0
        } else {
            stalled as f64 / non_final as f64
        },
        max_stall_chunks: max_stall,
        utterances: logs.len(),
        empty_outputs: empty,
        clock: cfg.clock,
    })
}

pub fn write_run_log<W: Write>(output: &RunOutput, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    let header = LogLine::Header {
        header: output.header.clone(),
    };
    serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    for l in &output.logs {
        serde_json::to_writer(&mut out, l).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_run_log(output: &RunOutput, path: &Path) -> Result<()> {
    write_run_log(output, File::create(path)?)
}

/// Reads a (possibly concatenated) run log. Records are numbered from 1 by line.
pub fn read_run_log(path: &Path) -> Result<(LogHeader, Vec<UtteranceLog>)> {
    let file = File::open(path)?;
    let mut header = None;
    let mut logs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let record = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine = serde_json::from_str(&line).map_err(|e| Error::CorruptLog {
            record,
            message: e.to_string(),
        })?;
        match parsed {
            LogLine::Header { header: h } => {
                if header.is_none() {
                    header = Some(h);
                }
            }
            LogLine::Utterance(u) => {
                if header.is_none() {
                    return Err(Error::CorruptLog {
                        record,
                        message: "utterance before any header".into(),
                    });
                }
                logs.push(u);
            }
        }
    }
    let header = header.ok_or(Error::CorruptLog {
        record: 0,
        message: "no header".into(),
    })?;
    Ok((header, logs))
}

/// Recomputes the summary of a persisted run log.
pub fn score(log_path: &Path) -> Result<RunSummary> {
    let (header, logs) = read_run_log(log_path)?;
    summarize(&header, &logs)
}

/// Runs every grid point (twice, CFM on and off, for paired ablations) and
/// returns rows sorted by ideal latency.
pub fn sweep_corpus(sweep: &SweepConfig, corpus: &Corpus) -> Result<Vec<RunSummary>> {
    let mut rows = Vec::new();
    for point in sweep.points()? {
        let variants: Vec<Settings> = if sweep.paired_ablation {
            ["on", "off"]
                .iter()
                .map(|v| {
                    let mut p = point.clone();
                    p.insert("cfm".into(), v.to_string());
                    p
                })
                .collect()
        } else {
            vec![point]
        };
        for settings in variants {
            let cfg = RunConfig::from_settings(&settings)?;
            rows.push(run_corpus(&cfg, corpus)?.summary);
        }
    }
    rows.sort_by(|a, b| a.laal_ideal.total_cmp(&b.laal_ideal));
    Ok(rows)
}

pub fn sweep(sweep: &SweepConfig) -> Result<Vec<RunSummary>> {
    let cfg = RunConfig::from_settings(&sweep.base)?;
    let corpus = load_corpus(&cfg.dataset_path)?;
    sweep_corpus(sweep, &corpus)
}

pub const SUMMARY_COLUMNS: [&str; 11] = [
    "policy",
    "param",
    "chunk_ms",
    "cfm",
    "bleu",
    "bleu_ci_low",
    "bleu_ci_high",
    "laal_ideal",
    "laal_ca",
    "stall_rate",
    "clock",
];

/// Tab-separated summary table with a header row.
pub fn write_summary_tsv<W: Write>(rows: &[RunSummary], mut out: W) -> Result<()> {
    writeln!(out, "{}", SUMMARY_COLUMNS.join("\t"))?;
    for r in rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.3}\t{:.3}\t{:.4}\t{}",
            r.policy,
            r.param,
            r.chunk_ms,
            if r.cfm { "on" } else { "off" },
            r.bleu,
            r.bleu_ci_low,
            r.bleu_ci_high,
            r.laal_ideal,
            r.laal_ca,
            r.stall_rate,
            r.clock.name(),
        )?;
    }
    Ok(())
}

pub fn summary_tsv(rows: &[RunSummary]) -> String {
    let mut buf = Vec::new();
    write_summary_tsv(rows, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("utf-8 table")
}
