//! Pipeline configuration: one JSON document with a section per stage.

use std::path::{Path, PathBuf};

use hft_core::execution::{ActionGrid, FEE_TABLE};
use hft_core::learner::TrainConfig;
use hft_core::marketdata::{five_regime_suite, CsvSpec, MacdSpans, Regime, RegimeKind, SynthSpec, FIVE_REGIME_ORDER};
use hft_core::pool::{SegmentConfig, DEFAULT_BETAS};
use hft_core::router::RouterConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Seconds per regime in the built-in synthetic splits.
const REGIME_SECONDS: usize = 7200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSplits {
    pub train: SynthSpec,
    pub valid: SynthSpec,
    pub test: SynthSpec,
}

impl SynthSplits {
    /// Training data cycles the five alternating regimes twice; validation and test are one
    /// pass each, on later timestamps and their own seeds.
    pub fn regime_suite(seed: u64) -> Self {
        let cycle = || FIVE_REGIME_ORDER.iter().map(|&k| Regime::preset(k, REGIME_SECONDS));
        let train = SynthSpec::new(seed, cycle().chain(cycle()).collect());
        let mut valid = five_regime_suite(seed + 1, REGIME_SECONDS);
        valid.start_ts = train.start_ts + (10 * REGIME_SECONDS) as i64;
        let mut test = five_regime_suite(seed + 2, REGIME_SECONDS);
        test.start_ts = valid.start_ts + (5 * REGIME_SECONDS) as i64;
        Self { train, valid, test }
    }

    /// Every split gets the same regimes; seeds `seed`, `seed + 1`, `seed + 2`.
    pub fn from_regimes(seed: u64, regimes: Vec<Regime>) -> Self {
        let len: usize = regimes.iter().map(|r| r.length_seconds).sum();
        let train = SynthSpec::new(seed, regimes);
        let mut valid = SynthSpec { seed: seed + 1, ..train.clone() };
        valid.start_ts = train.start_ts + len as i64;
        let mut test = SynthSpec { seed: seed + 2, ..train.clone() };
        test.start_ts = valid.start_ts + len as i64;
        Self { train, valid, test }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSplits {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
    #[serde(default)]
    pub spec: CsvSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Longest accepted split, in seconds.
    pub max_seconds: usize,
    pub synth: Option<SynthSplits>,
    pub csv: Option<CsvSplits>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub macd: MacdSpans,
    pub macd_threshold: f64,
    pub iv_levels: usize,
    pub iv_upper: f64,
    pub iv_lower: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            macd: MacdSpans::default(),
            macd_threshold: 0.0,
            iv_levels: 5,
            iv_upper: 0.2,
            iv_lower: -0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub data: DataConfig,
    pub grid: ActionGrid,
    /// Commission rate applied to every fill.
    pub fee_rate: f64,
    /// Chunk length in seconds for preference sampling.
    pub chunk_len: usize,
    pub betas: Vec<f64>,
    /// Tail mass excluded from density correction when sampling chunks.
    pub theta: f64,
    /// Best checkpoints (by validation reward) kept per preference.
    pub agents_per_beta: usize,
    pub segment: SegmentConfig,
    pub learner: TrainConfig,
    pub router: RouterConfig,
    pub baselines: BaselineConfig,
    /// Seed for training stages. Data and labels never depend on it.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data: DataConfig {
                max_seconds: 10_000_000,
                synth: Some(SynthSplits::regime_suite(7)),
                csv: None,
            },
            grid: ActionGrid {
                max_position: 1.0,
                n_actions: 5,
            },
            fee_rate: FEE_TABLE,
            chunk_len: 3600,
            betas: DEFAULT_BETAS.to_vec(),
            theta: 0.1,
            agents_per_beta: 5,
            segment: SegmentConfig::default(),
            learner: TrainConfig {
                epochs: 50,
                chunks_per_epoch: 16,
                temperature: 0.01,
                ..TrainConfig::default()
            },
            router: RouterConfig::default(),
            baselines: BaselineConfig::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Minutes-scale CPU budget: fewer epochs and agents, shorter chunks, small nets.
    pub fn desk() -> Self {
        let base = Self::default();
        Self {
            data: DataConfig {
                max_seconds: 200_000,
                ..base.data
            },
            chunk_len: 900,
            agents_per_beta: 2,
            learner: TrainConfig {
                epochs: 5,
                chunks_per_epoch: 64,
                hidden: vec![64, 64],
                ..base.learner
            },
            router: RouterConfig {
                episodes: 300,
                hidden: vec![32, 32],
                gamma: 0.9,
                batch_size: 64,
                update_ratio: 8.0,
                ..base.router
            },
            ..base
        }
    }

    pub fn preset(name: &str) -> Result<Self, CliError> {
        match name {
            "default" => Ok(Self::default()),
            "desk" => Ok(Self::desk()),
            other => Err(CliError::Config(format!("unknown preset {other:?} (expected default or desk)"))),
        }
    }

    /// Starts from `preset` and overlays the keys present in the JSON file at `path`.
    pub fn load(preset: &str, path: Option<&Path>) -> Result<Self, CliError> {
        let base = Self::preset(preset)?;
        let Some(path) = path else {
            return Ok(base);
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let overlay: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut merged = serde_json::to_value(&base).expect("config serializes");
        merge(&mut merged, overlay);
        let mut cfg: Self = serde_json::from_value(merged).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        // relative csv paths are relative to the config file
        if let (Some(csv), Some(dir)) = (cfg.data.csv.as_mut(), path.parent()) {
            for p in [&mut csv.train, &mut csv.valid, &mut csv.test] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        match (&self.data.synth, &self.data.csv) {
            (Some(_), Some(_)) => return bad("data: give either synth or csv, not both".into()),
            (None, None) => return bad("data: one of synth or csv is required".into()),
            _ => {}
        }
        ActionGrid::new(self.grid.max_position, self.grid.n_actions).map_err(|e| CliError::Config(format!("grid: {e}")))?;
        if self.grid.n_actions > 256 {
            return bad("grid: at most 256 actions".into());
        }
        if !(0.0..1.0).contains(&self.fee_rate) {
            return bad(format!("fee_rate must be in [0, 1), got {}", self.fee_rate));
        }
        if self.chunk_len < 2 {
            return bad("chunk_len must be at least 2".into());
        }
        if self.betas.is_empty() || self.betas.iter().any(|b| !b.is_finite()) {
            return bad("betas must be a non-empty list of finite numbers".into());
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return bad(format!("theta must be in (0, 1), got {}", self.theta));
        }
        if self.agents_per_beta == 0 || self.agents_per_beta > self.learner.epochs {
            return bad("agents_per_beta must be in 1..=learner.epochs".into());
        }
        if self.segment.m < 3 {
            return bad("segment.m must be at least 3".into());
        }
        self.learner.validate().map_err(|e| CliError::Config(format!("learner: {e}")))?;
        if self.learner.initial_position >= self.grid.n_actions {
            return bad("learner.initial_position is off the grid".into());
        }
        if self.router.episodes == 0 || self.router.batch_size == 0 || self.router.buffer_capacity < self.router.batch_size {
            return bad("router: episodes and batch_size must be positive and the buffer must hold a batch".into());
        }
        Ok(())
    }

    /// Hash of the sections a stage depends on; see [`crate::pipeline::Stage::config_keys`].
    pub fn section_hash(&self, keys: &[&str]) -> String {
        let full = serde_json::to_value(self).expect("config serializes");
        let picked: serde_json::Map<String, Value> = keys.iter().map(|k| (k.to_string(), full[*k].clone())).collect();
        sha256_hex(serde_json::to_string(&picked).expect("json").as_bytes())
    }
}

/// Parses `kind:seconds[,kind:seconds...]` into preset regimes.
pub fn parse_regimes(s: &str) -> Result<Vec<Regime>, CliError> {
    s.split(',')
        .map(|part| {
            let (kind, secs) = part
                .split_once(':')
                .ok_or_else(|| CliError::Config(format!("regime {part:?} is not kind:seconds")))?;
            let kind: RegimeKind = kind.trim().parse().map_err(|e| CliError::Config(format!("{e}")))?;
            let secs: usize = secs
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("regime {part:?}: seconds must be a positive integer")))?;
            if secs == 0 {
                return Err(CliError::Config(format!("regime {part:?}: seconds must be positive")));
            }
            Ok(Regime::preset(kind, secs))
        })
        .collect()
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
