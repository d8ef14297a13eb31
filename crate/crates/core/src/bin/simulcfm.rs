//! Command-line driver: `gen`, `run`, `sweep` and `score`.

use std::io::stdout;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use simulcfm::harness::config::{parse_pair, read_settings, Settings};
use simulcfm::harness::{self, RunConfig, SweepConfig};
use simulcfm::synthetic::{generate, save_corpus, TaskSpec};
use simulcfm::{Error, Result};

#[derive(Parser, Debug)]
#[command(author, version, about = "Simultaneous translation with contrastive feedback", long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus as JSON lines.
    Gen {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = TaskSpec::default().seed)]
        seed: u64,
        #[arg(long, default_value_t = TaskSpec::default().vocab_size)]
        vocab_size: usize,
        #[arg(long, default_value_t = TaskSpec::default().utterance_count)]
        utterances: usize,
        #[arg(long, default_value_t = TaskSpec::default().source_len_range.0)]
        min_len: usize,
        #[arg(long, default_value_t = TaskSpec::default().source_len_range.1)]
        max_len: usize,
        #[arg(long, default_value_t = TaskSpec::default().frames_per_token)]
        frames_per_token: u32,
        #[arg(long, default_value_t = TaskSpec::default().frame_ms)]
        frame_ms: u32,
        #[arg(long, default_value_t = TaskSpec::default().ambiguity_rate)]
        ambiguity_rate: f64,
        #[arg(long, default_value_t = TaskSpec::default().sticky_prior)]
        sticky_prior: f64,
        #[arg(long, default_value_t = TaskSpec::default().attn_spread)]
        attn_spread: f64,
    },
    /// Run one configuration and write its per-utterance log.
    Run {
        #[command(flatten)]
        settings: SettingsArgs,
        /// Run log output (JSON lines).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Summary output (TSV); stdout when omitted.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Sweep a parameter grid, optionally pairing CFM on/off per point.
    Sweep {
        #[command(flatten)]
        settings: SettingsArgs,
        /// Grid axis as key=v1,v2,...; repeatable.
        #[arg(long = "grid")]
        grid: Vec<String>,
        #[arg(long)]
        paired: bool,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Recompute the summary of a run log.
    Score {
        log: PathBuf,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

#[derive(clap::Args, Debug)]
struct SettingsArgs {
    /// Key-value configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Dataset path (same as --set dataset=PATH).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Override one setting as key=value; repeatable.
    #[arg(long = "set")]
    overrides: Vec<String>,
}

impl SettingsArgs {
    fn resolve(&self) -> Result<Settings> {
        let mut settings = match &self.config {
            Some(path) => read_settings(path)?,
            None => Settings::new(),
        };
        for pair in &self.overrides {
            let (k, v) = parse_pair(pair)?;
            settings.insert(k, v);
        }
        if let Some(d) = &self.dataset {
            settings.insert("dataset".into(), d.display().to_string());
        }
        Ok(settings)
    }
}

fn emit_summary(rows: &[harness::RunSummary], path: Option<&PathBuf>) -> Result<()> {
    match path {
        Some(p) => harness::write_summary_tsv(rows, std::fs::File::create(p)?),
        None => harness::write_summary_tsv(rows, stdout().lock()),
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen {
            out,
            seed,
            vocab_size,
            utterances,
            min_len,
            max_len,
            frames_per_token,
            frame_ms,
            ambiguity_rate,
            sticky_prior,
            attn_spread,
        } => {
            let spec = TaskSpec {
                seed,
                vocab_size,
                utterance_count: utterances,
                source_len_range: (min_len, max_len),
                frames_per_token,
                frame_ms,
                ambiguity_rate,
                sticky_prior,
                attn_spread,
            };
            let corpus = generate(&spec)?;
            save_corpus(&corpus, &out)?;
            eprintln!(
                "wrote {} utterances to {} (ambiguous fraction {:.3}, argmax-wrong fraction {:.3})",
                corpus.utterances.len(),
                out.display(),
                corpus.stats.ambiguous_fraction,
                corpus.stats.argmax_wrong_fraction
            );
            Ok(())
        }
        Command::Run {
            settings,
            log,
            summary,
        } => {
            let cfg = RunConfig::from_settings(&settings.resolve()?)?;
            let output = harness::run(&cfg)?;
            if let Some(path) = &log {
                harness::save_run_log(&output, path)?;
            }
            emit_summary(&[output.summary], summary.as_ref())
        }
        Command::Sweep {
            settings,
            grid,
            paired,
            summary,
        } => {
            let mut base = settings.resolve()?;
            for axis in &grid {
                let (k, v) = parse_pair(axis)?;
                base.insert(format!("grid.{k}"), v);
            }
            if paired {
                base.insert("paired_ablation".into(), "true".into());
            }
            let sweep = SweepConfig::from_settings(base)?;
            let rows = harness::sweep(&sweep)?;
            emit_summary(&rows, summary.as_ref())
        }
        Command::Score { log, summary } => {
            let row = harness::score(&log)?;
            emit_summary(&[row], summary.as_ref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
