//! Run and sweep configuration.
//!
//! Configuration is a flat set of `key = value` settings, read from a file
//! (`#` starts a comment) and overridden by command-line pairs. The fully
//! resolved settings, defaults included, are written into every run log.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::beam::BeamConfig;
use crate::cfm::CfmConfig;
use crate::engine::{Clock, EngineConfig, TokenCap};
use crate::error::{Error, Result};
use crate::policies::{PolicyConfig, PolicyKind};

pub type Settings = BTreeMap<String, String>;

/// Slack added to the source-length token cap.
pub const TOKEN_CAP_SLACK: usize = 10;

const POLICY_KEYS: [&str; 4] = ["f", "alpha", "lambda", "n"];

pub const KNOWN_KEYS: [&str; 19] = [
    "policy",
    "f",
    "alpha",
    "lambda",
    "n",
    "beam_size",
    "max_new_tokens",
    "length_norm_alpha",
    "cfm",
    "beta",
    "feedback_floor",
    "persist_contrast",
    "chunk_ms",
    "dataset",
    "seed",
    "workers",
    "clock",
    "resamples",
    "ci_level",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub policy: PolicyConfig,
    pub beam: BeamConfig,
    /// `None` caps new tokens per chunk by the received source length.
    pub max_new_tokens: Option<usize>,
    pub cfm: CfmConfig,
    pub chunk_ms: u32,
    pub dataset_path: PathBuf,
    /// Seed of the bootstrap resampling.
    pub seed: u64,
    pub workers: usize,
    pub clock: Clock,
    pub resamples: usize,
    pub ci_level: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            policy: PolicyConfig::AlignAtt { f: 8 },
            beam: BeamConfig::default(),
            max_new_tokens: None,
            cfm: CfmConfig::default(),
            chunk_ms: 1000,
            dataset_path: PathBuf::new(),
            seed: 1,
            workers: 1,
            clock: Clock::Ideal,
            resamples: 1000,
            ci_level: 0.95,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn parse_flag(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        other => Err(Error::Config(format!("bad flag {other:?} for {key}"))),
    }
}

impl RunConfig {
    pub fn from_settings(settings: &Settings) -> Result<Self> {
        if let Some(k) = settings.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown setting {k:?}")));
        }
        let get = |k: &str| settings.get(k).map(String::as_str);
        let mut cfg = RunConfig::default();

        let kind = match get("policy") {
            Some(p) => PolicyKind::parse(p.trim())?,
            None => cfg.policy.kind(),
        };
        let allowed: &[&str] = match kind {
            PolicyKind::LocalAgreement => &[],
            PolicyKind::HoldN => &["n"],
            PolicyKind::EdAtt => &["alpha", "lambda"],
            PolicyKind::AlignAtt => &["f"],
        };
        for key in POLICY_KEYS {
            if settings.contains_key(key) && !allowed.contains(&key) {
                return Err(Error::Config(format!(
                    "parameter {key:?} does not apply to policy {kind}"
                )));
            }
        }
        cfg.policy = match kind {
            PolicyKind::LocalAgreement => PolicyConfig::LocalAgreement,
            PolicyKind::HoldN => PolicyConfig::HoldN {
                n: get("n").map_or(Ok(2), |v| parse("n", v))?,
            },
            PolicyKind::EdAtt => PolicyConfig::EdAtt {
                alpha: get("alpha").map_or(Ok(0.2), |v| parse("alpha", v))?,
                lambda: get("lambda")
                    .map_or(Ok(PolicyConfig::DEFAULT_LAMBDA), |v| parse("lambda", v))?,
            },
            PolicyKind::AlignAtt => PolicyConfig::AlignAtt {
                f: get("f").map_or(Ok(8), |v| parse("f", v))?,
            },
        };
        cfg.policy.validate()?;

        if let Some(v) = get("beam_size") {
            cfg.beam.beam_size = parse("beam_size", v)?;
        }
        if let Some(v) = get("max_new_tokens") {
            cfg.max_new_tokens = match v.trim() {
                "auto" => None,
                v => Some(parse("max_new_tokens", v)?),
            };
        }
        if let Some(n) = cfg.max_new_tokens {
            cfg.beam.max_new_tokens = n;
        }
        if let Some(v) = get("length_norm_alpha") {
            cfg.beam.length_norm_alpha = parse("length_norm_alpha", v)?;
        }
        cfg.beam
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;

        if let Some(v) = get("cfm") {
            cfg.cfm.enabled = parse_flag("cfm", v)?;
        }
        if let Some(v) = get("beta") {
            cfg.cfm.beta = parse("beta", v)?;
        }
        if let Some(v) = get("feedback_floor") {
            cfg.cfm.feedback_floor = parse("feedback_floor", v)?;
        }
        if let Some(v) = get("persist_contrast") {
            cfg.cfm.persist_contrast_in_score = parse_flag("persist_contrast", v)?;
        }
        cfg.cfm.validate()?;

        if let Some(v) = get("chunk_ms") {
            cfg.chunk_ms = parse("chunk_ms", v)?;
        }
        if cfg.chunk_ms == 0 {
            return Err(Error::Config("chunk_ms must be positive".into()));
        }
        if let Some(v) = get("dataset") {
            cfg.dataset_path = PathBuf::from(v.trim());
        }
        if let Some(v) = get("seed") {
            cfg.seed = parse("seed", v)?;
        }
        if let Some(v) = get("workers") {
            cfg.workers = parse("workers", v)?;
        }
        if cfg.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if let Some(v) = get("clock") {
            cfg.clock = Clock::parse(v.trim())?;
        }
        if let Some(v) = get("resamples") {
            cfg.resamples = parse("resamples", v)?;
        }
        if cfg.resamples < 100 {
            return Err(Error::Config("resamples must be >= 100".into()));
        }
        if let Some(v) = get("ci_level") {
            cfg.ci_level = parse("ci_level", v)?;
        }
        if !(cfg.ci_level > 0.0 && cfg.ci_level < 1.0) {
            return Err(Error::Config("ci_level must be in (0,1)".into()));
        }
        Ok(cfg)
    }

    /// Every setting, defaults included.
    pub fn to_settings(&self) -> Settings {
        let mut s = Settings::new();
        let mut put = |k: &str, v: String| {
            s.insert(k.to_string(), v);
        };
        put("policy", self.policy.kind().name().into());
        match self.policy {
            PolicyConfig::LocalAgreement => {}
            PolicyConfig::HoldN { n } => put("n", n.to_string()),
            PolicyConfig::EdAtt { alpha, lambda } => {
                put("alpha", alpha.to_string());
                put("lambda", lambda.to_string());
            }
            PolicyConfig::AlignAtt { f } => put("f", f.to_string()),
        }
        put("beam_size", self.beam.beam_size.to_string());
        put(
            "max_new_tokens",
            self.max_new_tokens
                .map_or_else(|| "auto".to_string(), |n| n.to_string()),
        );
        put("length_norm_alpha", self.beam.length_norm_alpha.to_string());
        put("cfm", if self.cfm.enabled { "on" } else { "off" }.into());
        put("beta", self.cfm.beta.to_string());
        put("feedback_floor", self.cfm.feedback_floor.to_string());
        put(
            "persist_contrast",
            self.cfm.persist_contrast_in_score.to_string(),
        );
        put("chunk_ms", self.chunk_ms.to_string());
        put("dataset", self.dataset_path.display().to_string());
        put("seed", self.seed.to_string());
        put("workers", self.workers.to_string());
        put("clock", self.clock.name().into());
        put("resamples", self.resamples.to_string());
        put("ci_level", self.ci_level.to_string());
        s
    }

    pub fn engine_config(&self, frames_per_token: usize) -> EngineConfig {
        EngineConfig {
            policy: self.policy,
            beam: self.beam,
            cfm: self.cfm,
            cap: match self.max_new_tokens {
                Some(_) => TokenCap::Fixed,
                None => TokenCap::PerSource {
                    frames_per_token,
                    slack: TOKEN_CAP_SLACK,
                },
            },
        }
    }

    /// Chunk length in frames; the chunk must be a positive multiple of the frame.
    pub fn chunk_frames(&self, frame_ms: u32) -> Result<usize> {
        if self.chunk_ms == 0 || !self.chunk_ms.is_multiple_of(frame_ms) {
            return Err(Error::Config(format!(
                "chunk_ms {} is not a positive multiple of frame_ms {frame_ms}",
                self.chunk_ms
            )));
        }
        Ok((self.chunk_ms / frame_ms) as usize)
    }
}

/// Parses `key = value` lines into settings.
pub fn parse_settings(text: &str) -> Result<Settings> {
    let mut out = Settings::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key = value, got {raw:?}", i + 1))
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn read_settings(path: &Path) -> Result<Settings> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_settings(&text)
}

/// Parses a single `key=value` override.
pub fn parse_pair(pair: &str) -> Result<(String, String)> {
    pair.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| Error::Config(format!("expected key=value, got {pair:?}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub base: Settings,
    pub grid: Vec<(String, Vec<String>)>,
    pub paired_ablation: bool,
}

impl SweepConfig {
    /// Splits `grid.<key> = v1, v2` and `paired_ablation` entries out of a
    /// settings map; everything else is the base run configuration.
    pub fn from_settings(mut settings: Settings) -> Result<Self> {
        let paired = match settings.remove("paired_ablation") {
            Some(v) => parse_flag("paired_ablation", &v)?,
            None => false,
        };
        let grid_keys: Vec<String> = settings
            .keys()
            .filter(|k| k.starts_with("grid."))
            .cloned()
            .collect();
        let mut grid = Vec::new();
        for k in grid_keys {
            let values = settings.remove(&k).unwrap_or_default();
            grid.push(parse_grid_axis(&k["grid.".len()..], &values)?);
        }
        let sweep = Self {
            base: settings,
            grid,
            paired_ablation: paired,
        };
        sweep.validate()?;
        Ok(sweep)
    }

    pub fn validate(&self) -> Result<()> {
        RunConfig::from_settings(&self.base)?;
        for (key, values) in &self.grid {
            if !KNOWN_KEYS.contains(&key.as_str()) || key == "dataset" {
                return Err(Error::Config(format!("unknown grid parameter {key:?}")));
            }
            if values.is_empty() {
                return Err(Error::Config(format!("grid axis {key:?} has no values")));
            }
        }
        Ok(())
    }

    /// Settings for every grid point, in row-major order of the axes.
    pub fn points(&self) -> Result<Vec<Settings>> {
        let mut points = vec![self.base.clone()];
        for (key, values) in &self.grid {
            points = points
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.insert(key.clone(), v.clone());
                        q
                    })
                })
                .collect();
        }
        for p in &points {
            RunConfig::from_settings(p)?;
        }
        Ok(points)
    }
}

/// Parses `v1,v2,...` for one grid axis.
pub fn parse_grid_axis(key: &str, values: &str) -> Result<(String, Vec<String>)> {
    let values: Vec<String> = values
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    Ok((key.trim().to_string(), values))
}
