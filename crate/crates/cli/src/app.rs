//! Command-line surface: flags override the loaded config, then the chosen stages run.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use hft_core::marketdata::FillPolicy;

use crate::ablation::{median_cs, median_rs, run_ablation, write_ablation_csv, Variant};
use crate::config::{parse_regimes, CsvSplits, DataConfig, PipelineConfig, SynthSplits};
use crate::error::CliError;
use crate::manifest::Workspace;
use crate::pipeline::{Pipeline, Stage, DATA_CONFIG_FILE};

#[derive(Debug, Parser)]
#[command(name = "hft", version, about = "Hierarchical second-level trading pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON file overlaid on the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base configuration: `default` or `desk`.
    #[arg(long, global = true, default_value = "default")]
    pub preset: String,
    /// Output directory; each stage writes into a subdirectory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Seed. For `synth` it seeds the generated data, everywhere else the training stages.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run even if upstream artifacts are stale or modified, and rerun up-to-date stages.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic train/valid/test series.
    Synth {
        /// Regimes as `kind:seconds,...`, used for every split.
        #[arg(long)]
        regimes: Option<String>,
    },
    /// Load train/valid/test series from CSV files.
    Ingest(IngestArgs),
    /// Segment and label every split by trend.
    Label,
    /// Train the low-level agents, one run per preference.
    TrainLow,
    /// Select the best agent per trend label and starting position.
    BuildPool,
    /// Train the minute-level router over the pool.
    TrainRouter,
    /// Backtest the router, pool agents and baselines on the test split.
    Backtest,
    /// Every stage in order; up-to-date stages are skipped.
    Run,
    /// Teacher ablation on the rising toy chunk.
    Ablate {
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Print the resolved configuration.
    Config,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, requires_all = ["valid", "test"])]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Book levels per side in the files.
    #[arg(long)]
    pub levels: Option<usize>,
    /// Gap handling: `reject` or `hold`.
    #[arg(long)]
    pub fill: Option<String>,
    /// Largest accepted timestamp step in seconds.
    #[arg(long)]
    pub gap_tolerance: Option<i64>,
    #[arg(long)]
    pub symbol: Option<String>,
}

fn reseed(splits: &mut SynthSplits, seed: u64) {
    splits.train.seed = seed;
    splits.valid.seed = seed + 1;
    splits.test.seed = seed + 2;
}

fn apply_ingest(cfg: &mut PipelineConfig, args: &IngestArgs) -> Result<(), CliError> {
    if let (Some(train), Some(valid), Some(test)) = (&args.train, &args.valid, &args.test) {
        let spec = cfg.data.csv.take().map(|c| c.spec).unwrap_or_default();
        cfg.data.csv = Some(CsvSplits {
            train: train.clone(),
            valid: valid.clone(),
            test: test.clone(),
            spec,
        });
        cfg.data.synth = None;
    }
    let Some(csv) = cfg.data.csv.as_mut() else {
        return Err(CliError::Config("ingest needs --train/--valid/--test or a data.csv section".into()));
    };
    if let Some(levels) = args.levels {
        csv.spec.levels = levels;
    }
    if let Some(fill) = &args.fill {
        csv.spec.fill = match fill.as_str() {
            "reject" => FillPolicy::Reject,
            "hold" => FillPolicy::Hold,
            other => return Err(CliError::Config(format!("--fill must be reject or hold, got {other:?}"))),
        };
    }
    if let Some(g) = args.gap_tolerance {
        csv.spec.gap_tolerance = g;
    }
    if let Some(s) = &args.symbol {
        csv.spec.symbol = s.clone();
    }
    Ok(())
}

/// Resolves the config for `command` from the preset, the config file and the flags.
pub fn resolve_config(global: &GlobalArgs, command: &Command) -> Result<PipelineConfig, CliError> {
    let mut cfg = PipelineConfig::load(&global.preset, global.config.as_deref())?;
    match command {
        Command::Synth { regimes } => {
            if let Some(r) = regimes {
                cfg.data.synth = Some(SynthSplits::from_regimes(global.seed.unwrap_or(0), parse_regimes(r)?));
                cfg.data.csv = None;
            } else if cfg.data.synth.is_none() {
                return Err(CliError::Config("synth needs --regimes or a data.synth section".into()));
            }
            if let (Some(seed), Some(s)) = (global.seed, cfg.data.synth.as_mut()) {
                reseed(s, seed);
            }
        }
        Command::Ingest(args) => apply_ingest(&mut cfg, args)?,
        Command::Run => {
            if let Some(seed) = global.seed {
                cfg.seed = seed;
            }
        }
        _ => {
            if let Some(seed) = global.seed {
                cfg.seed = seed;
            }
            adopt_recorded_data(&mut cfg, global)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Later stages take the data section the data stage recorded, so data made from command
/// line flags can be labelled and trained on without repeating the flags. A config file
/// that sets a different data section is refused unless forced.
fn adopt_recorded_data(cfg: &mut PipelineConfig, global: &GlobalArgs) -> Result<(), CliError> {
    let path = global.out.join("data").join(DATA_CONFIG_FILE);
    let Ok(text) = std::fs::read_to_string(&path) else {
        // the stage reports the missing upstream artifact itself
        return Ok(());
    };
    let recorded: DataConfig = serde_json::from_str(&text).map_err(|e| CliError::Upstream(format!("unreadable {}: {e}", path.display())))?;
    if recorded != cfg.data && explicit_data_section(global)? && !global.force {
        return Err(CliError::Upstream(format!(
            "{} was produced from a different data section than {}; rerun synth/ingest or pass --force",
            global.out.join("data").display(),
            global.config.as_deref().map_or("the config".into(), |p| p.display().to_string())
        )));
    }
    cfg.data = recorded;
    Ok(())
}

fn explicit_data_section(global: &GlobalArgs) -> Result<bool, CliError> {
    let Some(path) = &global.config else {
        return Ok(false);
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(value.get("data").is_some())
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = resolve_config(&cli.global, &cli.command)?;
    let ws = Workspace::new(&cli.global.out, cli.global.force);
    let stage = match &cli.command {
        Command::Synth { .. } | Command::Ingest(_) => Stage::Data,
        Command::Label => Stage::Label,
        Command::TrainLow => Stage::TrainLow,
        Command::BuildPool => Stage::Pool,
        Command::TrainRouter => Stage::Router,
        Command::Backtest => Stage::Backtest,
        Command::Run => {
            return Pipeline::new(cfg, ws)?.run_from(Stage::Data);
        }
        Command::Config => {
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            return Ok(());
        }
        Command::Ablate { seeds } => return ablate(&cli.global.out, *seeds),
    };
    Pipeline::new(cfg, ws)?.run_stage(stage)?;
    Ok(())
}

fn ablate(out: &std::path::Path, seeds: u64) -> anyhow::Result<()> {
    let seeds: Vec<u64> = (0..seeds).collect();
    let rows = run_ablation(&Variant::ALL, &seeds)?;
    let dir = out.join("ablation");
    std::fs::create_dir_all(&dir)?;
    write_ablation_csv(&rows, std::fs::File::create(dir.join("ablation.csv"))?)?;
    println!("variant,median_CS,median_RS");
    for v in Variant::ALL {
        println!("{},{},{}", v.name(), median_cs(&rows, v), median_rs(&rows, v));
    }
    Ok(())
}
