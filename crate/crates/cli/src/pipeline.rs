//! The staged pipeline. Every stage reads its upstream artifacts through their manifests,
//! writes into `<out>/<stage>/` and records what it read and wrote.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context};
use hft_core::backtest::{
    compute_metrics, default_initial_cash, iv_strategy, macd_strategy, run_backtest, run_router_backtest, BacktestResult, LowLevelPolicy,
};
use hft_core::execution::TRADE_LOG_HEADER;
use hft_core::learner::{train_low_level, write_train_log, EvalSet, GreedyTable, LowLevelTask, Standardizer, ValueNet};
use hft_core::marketdata::features::{HIGH_SCHEMA_ID, LOW_SCHEMA_ID};
use hft_core::marketdata::{load_market_csv, save_market_csv, synth_market, CsvSpec, FeatureMatrix, FillPolicy, MarketSeries};
use hft_core::pool::{
    build_agent_pool, chunk_dataset, label_minute_bars, label_name, read_labels, spans_to_segments, write_labels, AgentPool, Candidate,
    PoolAgent, PoolError, PrioritySampler, FLAT_ID,
};
use hft_core::router::{router_features, train_router, write_selection_log, AgentBank, HighLevelEnv, RouterNet, RouterTask};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::manifest::{hash_file, Workspace};
use crate::report::{write_comparison_csv, ComparisonRow};

pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

const STANDARDIZER_FILE: &str = "standardizer.json";
const HIGH_STANDARDIZER_FILE: &str = "high_standardizer.json";
const POOL_FILE: &str = "pool.json";
const ROUTER_FILE: &str = "router.bin";
/// The data section the data stage ran with; later commands adopt it.
pub const DATA_CONFIG_FILE: &str = "data_config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Data,
    Label,
    TrainLow,
    Pool,
    Router,
    Backtest,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Data, Stage::Label, Stage::TrainLow, Stage::Pool, Stage::Router, Stage::Backtest];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Data => "data",
            Stage::Label => "label",
            Stage::TrainLow => "train_low",
            Stage::Pool => "pool",
            Stage::Router => "router",
            Stage::Backtest => "backtest",
        }
    }

    /// Top-level config sections whose values the stage's outputs depend on, directly
    /// or through an upstream stage.
    pub fn config_keys(self) -> Vec<&'static str> {
        let training = ["data", "grid", "fee_rate", "chunk_len", "betas", "theta", "agents_per_beta", "learner", "seed"];
        match self {
            Stage::Data => vec!["data"],
            Stage::Label => vec!["data", "segment"],
            Stage::TrainLow => training.to_vec(),
            Stage::Pool => [&training[..], &["segment"]].concat(),
            Stage::Router => [&training[..], &["segment", "router"]].concat(),
            Stage::Backtest => [&training[..], &["segment", "router", "baselines"]].concat(),
        }
    }

    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Data => &[],
            Stage::Label => &[Stage::Data],
            Stage::TrainLow => &[Stage::Data],
            Stage::Pool => &[Stage::Data, Stage::Label, Stage::TrainLow],
            Stage::Router => &[Stage::Data, Stage::TrainLow, Stage::Pool],
            Stage::Backtest => &[Stage::Data, Stage::TrainLow, Stage::Pool, Stage::Router],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    UpToDate,
}

/// Facts about the data stage that later stages need to reload the splits.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct DataSummary {
    symbol: String,
    levels: usize,
    rows: BTreeMap<String, usize>,
}

/// Sidecar written next to each network checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub schema_id: String,
    pub sizes: Vec<usize>,
    pub grid: hft_core::execution::ActionGrid,
    pub config_hash: String,
    pub beta: Option<f64>,
    pub epoch: Option<usize>,
    pub eval_reward: Option<f64>,
    pub eval_ahl: Option<f64>,
    /// Hash of the pool manifest a router was trained against.
    pub pool_hash: Option<String>,
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub ws: Workspace,
}

/// Seed for one training job, derived from the run seed and a per-job tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(tag.wrapping_mul(0xBF58_476D_1CE4_E5B9)) ^ tag
}

fn data_err(context: impl std::fmt::Display) -> impl FnOnce(hft_core::marketdata::DataError) -> anyhow::Error {
    move |e| CliError::Data(format!("{context}: {e}")).into()
}

fn writer(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).map_err(|_| CliError::Upstream(format!("missing {}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Upstream(format!("unreadable {}: {e}", path.display())).into())
}

fn log(stage: Stage, msg: impl std::fmt::Display) {
    eprintln!("[{}] {msg}", stage.name());
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, ws: Workspace) -> Result<Self, CliError> {
        cfg.validate()?;
        Ok(Self { cfg, ws })
    }

    pub fn config_hash(&self, stage: Stage) -> String {
        self.cfg.section_hash(&stage.config_keys())
    }

    /// Verifies every upstream stage and collects their outputs as this stage's inputs.
    fn upstream_inputs(&self, stage: Stage) -> anyhow::Result<BTreeMap<String, String>> {
        let mut inputs = BTreeMap::new();
        for &up in stage.upstream() {
            let (_, files) = self.ws.verify_upstream(up.name(), &self.config_hash(up))?;
            inputs.extend(files);
        }
        Ok(inputs)
    }

    pub fn run_stage(&self, stage: Stage) -> anyhow::Result<Outcome> {
        let hash = self.config_hash(stage);
        let inputs = match stage {
            Stage::Data => self.source_inputs()?,
            _ => self.upstream_inputs(stage)?,
        };
        if self.ws.up_to_date(stage.name(), &hash, &inputs) {
            log(stage, "up to date");
            return Ok(Outcome::UpToDate);
        }
        self.ws.fresh_stage_dir(stage.name())?;
        let (outputs, summary) = match stage {
            Stage::Data => self.data()?,
            Stage::Label => self.label()?,
            Stage::TrainLow => self.train_low(&hash)?,
            Stage::Pool => self.pool()?,
            Stage::Router => self.router(&hash)?,
            Stage::Backtest => self.backtest()?,
        };
        self.ws.write_manifest(stage.name(), &hash, inputs, &outputs, summary)?;
        log(stage, format!("wrote {}", self.ws.stage_dir(stage.name()).display()));
        Ok(Outcome::Ran)
    }

    /// Runs every stage from `from` on, in order.
    pub fn run_from(&self, from: Stage) -> anyhow::Result<()> {
        for stage in Stage::ALL.into_iter().filter(|s| *s >= from) {
            self.run_stage(stage)?;
        }
        Ok(())
    }

    fn source_inputs(&self) -> anyhow::Result<BTreeMap<String, String>> {
        let mut inputs = BTreeMap::new();
        if let Some(csv) = &self.cfg.data.csv {
            for (split, path) in SPLITS.iter().zip([&csv.train, &csv.valid, &csv.test]) {
                if !path.exists() {
                    return Err(CliError::Data(format!("missing input {}", path.display())).into());
                }
                inputs.insert(format!("source/{split}.csv"), hash_file(path)?);
            }
        }
        Ok(inputs)
    }

    // ---- data ----

    fn data(&self) -> anyhow::Result<(Vec<String>, Value)> {
        let mut series = Vec::new();
        let symbol;
        if let Some(s) = &self.cfg.data.synth {
            for (split, spec) in SPLITS.iter().zip([&s.train, &s.valid, &s.test]) {
                series.push(synth_market(spec).map_err(|e| CliError::Config(format!("data.synth.{split}: {e}")))?);
            }
            symbol = s.train.symbol.clone();
        } else if let Some(c) = &self.cfg.data.csv {
            for path in [&c.train, &c.valid, &c.test] {
                series.push(load_market_csv(path, &c.spec).map_err(data_err(path.display()))?);
            }
            symbol = c.spec.symbol.clone();
        } else {
            bail!(CliError::Config("no data source".into()));
        }
        let mut outputs = Vec::new();
        let mut rows = BTreeMap::new();
        for (split, s) in SPLITS.iter().zip(&series) {
            if s.len() > self.cfg.data.max_seconds {
                return Err(CliError::Config(format!(
                    "{split} split has {} seconds, more than data.max_seconds = {}",
                    s.len(),
                    self.cfg.data.max_seconds
                ))
                .into());
            }
            let file = format!("{split}.csv");
            save_market_csv(s, self.ws.path("data", &file)).map_err(data_err(&file))?;
            outputs.push(file);
            rows.insert(split.to_string(), s.len());
            log(Stage::Data, format!("{split}: {} seconds", s.len()));
        }
        write_json(&self.ws.path("data", DATA_CONFIG_FILE), &self.cfg.data)?;
        outputs.push(DATA_CONFIG_FILE.into());
        let summary = DataSummary {
            symbol,
            levels: series[0].lobs[0].depth(),
            rows,
        };
        Ok((outputs, serde_json::to_value(summary)?))
    }

    /// Reloads a split written by the data stage.
    pub fn load_split(&self, split: &str) -> anyhow::Result<MarketSeries> {
        let manifest = self.ws.read_manifest("data")?;
        let summary: DataSummary = serde_json::from_value(manifest.summary)
            .map_err(|e| CliError::Upstream(format!("data manifest summary: {e}")))?;
        let spec = CsvSpec {
            levels: summary.levels,
            gap_tolerance: 1,
            fill: FillPolicy::Reject,
            symbol: summary.symbol,
        };
        let path = self.ws.path("data", &format!("{split}.csv"));
        load_market_csv(&path, &spec).map_err(data_err(path.display()))
    }

    // ---- label ----

    fn label(&self) -> anyhow::Result<(Vec<String>, Value)> {
        let mut outputs = Vec::new();
        let mut counts = BTreeMap::new();
        for split in SPLITS {
            let series = self.load_split(split)?;
            let spans = label_minute_bars(&series.minute_bars, &self.cfg.segment)
                .map_err(|e| CliError::Data(format!("labelling {split}: {e}")))?;
            let file = format!("{split}_labels.csv");
            write_labels(&spans, writer(&self.ws.path("label", &file))?)?;
            log(Stage::Label, format!("{split}: {} segments", spans.len()));
            counts.insert(split, spans.len());
            outputs.push(file);
        }
        Ok((outputs, json!({ "segments": counts })))
    }

    // ---- train_low ----

    fn low_features(&self, series: &MarketSeries, standardizer: &Standardizer) -> anyhow::Result<FeatureMatrix> {
        let mut f = FeatureMatrix::low_level(series);
        standardizer.apply(&mut f)?;
        Ok(f)
    }

    fn train_low(&self, config_hash: &str) -> anyhow::Result<(Vec<String>, Value)> {
        let cfg = &self.cfg;
        let train = self.load_split("train")?;
        let valid = self.load_split("valid")?;
        let raw = FeatureMatrix::low_level(&train);
        let standardizer = Standardizer::fit(&raw);
        let f_train = self.low_features(&train, &standardizer)?;
        let f_valid = self.low_features(&valid, &standardizer)?;
        let task = LowLevelTask::new(&train, &f_train, cfg.grid, cfg.fee_rate)?;
        let eval = EvalSet {
            task: LowLevelTask::new(&valid, &f_valid, cfg.grid, cfg.fee_rate)?,
            ranges: vec![0..valid.len()],
        };
        let chunks = chunk_dataset(&train, cfg.chunk_len).map_err(|e| CliError::Config(format!("chunk_len: {e}")))?;

        let runs: Vec<_> = cfg
            .betas
            .par_iter()
            .enumerate()
            .map(|(i, &beta)| -> anyhow::Result<_> {
                let mut sampler = PrioritySampler::new(chunks.clone(), beta, cfg.theta)?;
                let learner = hft_core::learner::TrainConfig {
                    seed: derive_seed(cfg.seed, i as u64),
                    ..cfg.learner.clone()
                };
                let out = train_low_level(&task, &mut sampler, &learner, Some(&eval))?;
                log(
                    Stage::TrainLow,
                    format!(
                        "beta {beta}: best validation reward {:.4}",
                        out.log.iter().map(|r| r.eval_reward).fold(f64::NEG_INFINITY, f64::max)
                    ),
                );
                Ok((i, beta, out))
            })
            .collect::<anyhow::Result<_>>()?;

        let mut outputs = vec![STANDARDIZER_FILE.to_string()];
        write_json(&self.ws.path("train_low", STANDARDIZER_FILE), &standardizer)?;
        let mut agents = Vec::new();
        for (i, beta, out) in runs {
            let log_file = format!("log_b{i}.csv");
            write_train_log(&out.log, writer(&self.ws.path("train_low", &log_file))?)?;
            outputs.push(log_file);
            // best validation reward first; the earlier epoch wins a tie
            let mut order: Vec<usize> = (0..out.log.len()).collect();
            order.sort_by(|&a, &b| out.log[b].eval_reward.total_cmp(&out.log[a].eval_reward).then(a.cmp(&b)));
            order.truncate(cfg.agents_per_beta);
            order.sort_unstable();
            for epoch in order {
                let id = format!("b{i}_e{epoch:03}");
                let net = &out.checkpoints[epoch];
                let bin = format!("{id}.bin");
                let mut w = writer(&self.ws.path("train_low", &bin))?;
                net.write_binary(&mut w)?;
                w.flush()?;
                let sidecar = CheckpointManifest {
                    schema_id: LOW_SCHEMA_ID.into(),
                    sizes: net.sizes().to_vec(),
                    grid: cfg.grid,
                    config_hash: config_hash.into(),
                    beta: Some(beta),
                    epoch: Some(epoch),
                    eval_reward: Some(out.log[epoch].eval_reward),
                    eval_ahl: Some(out.log[epoch].ahl),
                    pool_hash: None,
                };
                let side = format!("{id}.json");
                write_json(&self.ws.path("train_low", &side), &sidecar)?;
                outputs.extend([bin, side]);
                agents.push(id);
            }
        }
        Ok((outputs, json!({ "agents": agents })))
    }

    fn standardizer(&self, stage: &str, file: &str) -> anyhow::Result<Standardizer> {
        read_json(&self.ws.path(stage, file))
    }

    fn load_agent_net(&self, id: &str) -> anyhow::Result<ValueNet> {
        let path = self.ws.path("train_low", &format!("{id}.bin"));
        let file = File::open(&path).map_err(|_| CliError::Upstream(format!("missing {}", path.display())))?;
        ValueNet::read_binary(std::io::BufReader::new(file))
            .map_err(|e| CliError::Upstream(format!("{}: {e}", path.display())).into())
    }

    fn trained_agent_ids(&self) -> anyhow::Result<Vec<String>> {
        let m = self.ws.read_manifest("train_low")?;
        serde_json::from_value(m.summary["agents"].clone()).map_err(|e| CliError::Upstream(format!("train_low manifest: {e}")).into())
    }

    /// Greedy tables over all of `series` for the pool's agents.
    fn agent_bank(&self, ids: &[String], series: &MarketSeries, features: &FeatureMatrix) -> anyhow::Result<AgentBank> {
        let n = self.cfg.grid.n_actions;
        let built: Vec<(String, PoolAgent)> = ids
            .par_iter()
            .map(|id| -> anyhow::Result<_> {
                if id == FLAT_ID {
                    return Ok((id.clone(), PoolAgent::Constant(0)));
                }
                let net = self.load_agent_net(id)?;
                Ok((id.clone(), PoolAgent::Table(GreedyTable::build(&net, features, n, 0..series.len()))))
            })
            .collect::<anyhow::Result<_>>()?;
        Ok(built.into_iter().collect())
    }

    // ---- pool ----

    fn pool(&self) -> anyhow::Result<(Vec<String>, Value)> {
        let valid = self.load_split("valid")?;
        let f_valid = self.low_features(&valid, &self.standardizer("train_low", STANDARDIZER_FILE)?)?;
        let labels_path = self.ws.path("label", "valid_labels.csv");
        let spans = read_labels(File::open(&labels_path).map_err(|_| CliError::Upstream(format!("missing {}", labels_path.display())))?)
            .map_err(|e| CliError::Upstream(format!("{}: {e}", labels_path.display())))?;
        let segments = spans_to_segments(&valid, &spans)?;
        let ids = self.trained_agent_ids()?;
        let bank = self.agent_bank(&ids, &valid, &f_valid)?;
        let candidates: Vec<Candidate> = ids
            .iter()
            .map(|id| Candidate {
                id: id.clone(),
                agent: bank[id].clone(),
            })
            .collect();
        let m = self.cfg.segment.m;
        let names: Vec<String> = (1..=m).map(|l| label_name(l, m)).collect();
        let pool = build_agent_pool(&candidates, &valid, &segments, self.cfg.grid, self.cfg.fee_rate, &names).map_err(|e| match e {
            PoolError::EmptyLabel(l) => anyhow::Error::from(CliError::Data(format!(
                "the validation split has no segment labelled {l} ({}); use a longer or more varied validation series",
                names[l - 1]
            ))),
            other => other.into(),
        })?;
        std::fs::write(self.ws.path("pool", POOL_FILE), pool.to_json() + "\n")?;
        log(Stage::Pool, format!("{} distinct agents across {} cells", pool.agent_ids().len(), pool.cells.len()));
        Ok((vec![POOL_FILE.into()], json!({ "agents": pool.agent_ids() })))
    }

    fn load_pool(&self) -> anyhow::Result<AgentPool> {
        let path = self.ws.path("pool", POOL_FILE);
        let text = std::fs::read_to_string(&path).map_err(|_| CliError::Upstream(format!("missing {}", path.display())))?;
        AgentPool::from_json(&text).map_err(|e| CliError::Upstream(format!("{}: {e}", path.display())).into())
    }

    /// Minute-level router inputs for `series`, standardized with `standardizer`.
    fn high_features(series: &MarketSeries, standardizer: &Standardizer) -> anyhow::Result<FeatureMatrix> {
        let mut high = FeatureMatrix::high_level(&series.minute_bars);
        standardizer.apply(&mut high)?;
        Ok(router_features(&high))
    }

    // ---- router ----

    fn router(&self, config_hash: &str) -> anyhow::Result<(Vec<String>, Value)> {
        let train = self.load_split("train")?;
        let f_train = self.low_features(&train, &self.standardizer("train_low", STANDARDIZER_FILE)?)?;
        let pool = self.load_pool()?;
        let bank = self.agent_bank(&pool.agent_ids(), &train, &f_train)?;
        let high_std = Standardizer::fit(&FeatureMatrix::high_level(&train.minute_bars));
        let features = Self::high_features(&train, &high_std)?;
        let task = RouterTask {
            series: &train,
            features: &features,
            pool: &pool,
            bank: &bank,
            fee_rate: self.cfg.fee_rate,
        };
        let rcfg = hft_core::router::RouterConfig {
            seed: derive_seed(self.cfg.seed, 1 << 20),
            ..self.cfg.router.clone()
        };
        let (router, history) = train_router(&task, &rcfg)?;
        let tail = history.len().saturating_sub(20);
        let recent = history[tail..].iter().map(|r| r.episode_reward).sum::<f64>() / (history.len() - tail).max(1) as f64;
        log(Stage::Router, format!("{} episodes, mean reward of the last {}: {recent:.4}", history.len(), history.len() - tail));

        let mut w = writer(&self.ws.path("router", ROUTER_FILE))?;
        router.net.write_binary(&mut w)?;
        w.flush()?;
        let sidecar = CheckpointManifest {
            schema_id: HIGH_SCHEMA_ID.into(),
            sizes: router.net.sizes().to_vec(),
            grid: self.cfg.grid,
            config_hash: config_hash.into(),
            beta: None,
            epoch: Some(rcfg.episodes),
            eval_reward: Some(recent),
            eval_ahl: None,
            pool_hash: Some(hash_file(&self.ws.path("pool", POOL_FILE))?),
        };
        write_json(&self.ws.path("router", "router.json"), &sidecar)?;
        write_json(&self.ws.path("router", HIGH_STANDARDIZER_FILE), &high_std)?;
        let mut csv = csv::Writer::from_writer(writer(&self.ws.path("router", "train_log.csv"))?);
        for row in &history {
            csv.serialize(row)?;
        }
        csv.flush()?;
        Ok((
            vec![ROUTER_FILE.into(), "router.json".into(), HIGH_STANDARDIZER_FILE.into(), "train_log.csv".into()],
            Value::Null,
        ))
    }

    fn load_router(&self) -> anyhow::Result<RouterNet> {
        let side: CheckpointManifest = read_json(&self.ws.path("router", "router.json"))?;
        let pool_hash = hash_file(&self.ws.path("pool", POOL_FILE))?;
        if side.pool_hash.as_deref() != Some(pool_hash.as_str()) && !self.ws.force {
            return Err(CliError::Upstream("router was trained against a different pool; rerun train-router or pass --force".into()).into());
        }
        let path = self.ws.path("router", ROUTER_FILE);
        let file = File::open(&path).map_err(|_| CliError::Upstream(format!("missing {}", path.display())))?;
        let net = ValueNet::read_binary(std::io::BufReader::new(file)).map_err(|e| CliError::Upstream(format!("{}: {e}", path.display())))?;
        Ok(RouterNet { net })
    }

    // ---- backtest ----

    fn backtest(&self) -> anyhow::Result<(Vec<String>, Value)> {
        let cfg = &self.cfg;
        let test = self.load_split("test")?;
        let f_low = self.low_features(&test, &self.standardizer("train_low", STANDARDIZER_FILE)?)?;
        let pool = self.load_pool()?;
        let router = self.load_router()?;
        let bank = self.agent_bank(&pool.agent_ids(), &test, &f_low)?;
        let features = Self::high_features(&test, &self.standardizer("router", HIGH_STANDARDIZER_FILE)?)?;
        let cash = default_initial_cash(&test, cfg.grid);
        let dir = |f: &str| self.ws.path("backtest", f);

        let env = HighLevelEnv::new(&test, &features, &pool, &bank, cfg.fee_rate, 0..test.len(), 0, cash)?;
        let (router_result, steps) = run_router_backtest(&router, env)?;
        write_selection_log(&steps, writer(&dir("router_selection.csv"))?)?;
        let mut outputs = vec!["router_selection.csv".to_string()];

        let mut results: Vec<(String, BacktestResult)> = vec![("router".into(), router_result)];
        let agent_ids: Vec<String> = pool.agent_ids().into_iter().filter(|id| id != FLAT_ID).collect();
        let agent_runs: Vec<(String, BacktestResult)> = agent_ids
            .par_iter()
            .map(|id| -> anyhow::Result<_> {
                let mut policy = &bank[id];
                Ok((id.clone(), run_backtest(&mut policy, &test, cfg.fee_rate, cfg.grid, cash)?))
            })
            .collect::<anyhow::Result<_>>()?;
        results.extend(agent_runs);

        let b = &cfg.baselines;
        let (full, flat) = (PoolAgent::Constant(cfg.grid.n_actions - 1), PoolAgent::Constant(0));
        let mut baselines: Vec<(&str, Box<dyn LowLevelPolicy + '_>)> = vec![
            ("buy_and_hold", Box::new(&full)),
            ("flat", Box::new(&flat)),
            ("macd", Box::new(macd_strategy(&test, b.macd, b.macd_threshold, cfg.grid)?)),
            ("iv", Box::new(iv_strategy(&test, b.iv_levels, b.iv_upper, b.iv_lower, cfg.grid)?)),
        ];
        for (name, policy) in baselines.iter_mut() {
            results.push((name.to_string(), run_backtest(policy.as_mut(), &test, cfg.fee_rate, cfg.grid, cash)?));
        }

        let mut rows = Vec::new();
        for (name, result) in &results {
            let file = format!("equity_{name}.csv");
            let mut w = writer(&dir(&file))?;
            result.curve.write_csv(&mut w)?;
            w.flush()?;
            outputs.push(file);
            let trades = format!("trades_{name}.csv");
            let mut w = writer(&dir(&trades))?;
            writeln!(w, "{TRADE_LOG_HEADER}")?;
            for t in &result.trades {
                writeln!(w, "{}", t.csv_line())?;
            }
            w.flush()?;
            outputs.push(trades);
            rows.push(ComparisonRow {
                policy: name.clone(),
                metrics: compute_metrics(&result.curve)?,
            });
        }
        write_json(&dir("metrics.json"), &rows)?;
        write_comparison_csv(&rows, writer(&dir("comparison.csv"))?)?;
        std::fs::write(dir("comparison.md"), crate::report::markdown_table(&rows))?;
        outputs.extend(["metrics.json".into(), "comparison.csv".into(), "comparison.md".into()]);
        eprint!("{}", crate::report::markdown_table(&rows));
        Ok((outputs, Value::Null))
    }
}
