//! The minute-level MDP: each step dispatches one pool agent, chosen by trend label from
//! the column matching the current position, for sixty seconds.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::execution::{ExecError, LowLevelEnv, Observation, TradeRecord};
use crate::learner::{argmax, qteacher_loss, soft_update, state_vector, Adam, LearnError, LossConfig, ReplayBuffer, Transition, ValueNet};
use crate::marketdata::{FeatureMatrix, MarketSeries};
use crate::pool::{AgentPool, PoolAgent, PoolCell};

/// Seconds per high-level step.
pub const MINUTE: usize = 60;

#[derive(Debug, thiserror::Error)]
pub enum RouterError {
    #[error("pool references agent {0:?} that was not supplied")]
    MissingAgent(String),
    #[error("label {label} outside 1..={m}")]
    BadLabel { label: usize, m: usize },
    #[error("high-level features have {rows} rows, need {need}")]
    Features { rows: usize, need: usize },
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Learn(#[from] LearnError),
}

/// Agents by pool id, prepared for one series.
pub type AgentBank = BTreeMap<String, PoolAgent>;

/// The pool column whose initial position is the grid point nearest `position`.
pub fn mask_to_column(pool: &AgentPool, position: f64) -> Vec<&PoolCell> {
    let p = pool.grid.nearest_index(position);
    (1..=pool.m()).map(|label| pool.cell(label, p)).collect()
}

/// Router input rows: row 0 is all zeros (no completed minute yet) and row `k` holds the
/// minute-level features computed through minute `k - 1`.
pub fn router_features(high: &FeatureMatrix) -> FeatureMatrix {
    let mut data = vec![0.0; high.dim];
    data.extend_from_slice(&high.data);
    FeatureMatrix {
        schema_id: high.schema_id.clone(),
        dim: high.dim,
        data,
        nan_count: high.nan_count,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HighStep {
    pub reward: f64,
    pub done: bool,
    pub next: Observation,
    pub label: usize,
    pub position_before: usize,
    pub minute_ts: i64,
    pub low_steps: usize,
    /// Low-level orders cut down to available depth during the minute.
    pub clipped: usize,
    /// A corrective order moved an off-grid position back onto the grid.
    pub snapped: bool,
}

/// One point of a per-second equity trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquityPoint {
    pub ts: i64,
    pub net_value: f64,
    pub position: f64,
}

pub struct HighLevelEnv<'a> {
    low: LowLevelEnv<'a>,
    features: &'a FeatureMatrix,
    pool: &'a AgentPool,
    bank: &'a AgentBank,
    stride: usize,
    curve: Option<Vec<EquityPoint>>,
}

impl<'a> HighLevelEnv<'a> {
    /// `features` must come from [`router_features`] over the minute bars of `series`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        series: &'a MarketSeries,
        features: &'a FeatureMatrix,
        pool: &'a AgentPool,
        bank: &'a AgentBank,
        fee_rate: f64,
        range: Range<usize>,
        initial_index: usize,
        initial_cash: f64,
    ) -> Result<Self, RouterError> {
        for id in pool.agent_ids() {
            if !bank.contains_key(&id) {
                return Err(RouterError::MissingAgent(id));
            }
        }
        let need = series.completed_minutes_before(range.end.saturating_sub(1)) + 1;
        if features.rows() < need {
            return Err(RouterError::Features {
                rows: features.rows(),
                need,
            });
        }
        let low = LowLevelEnv::new(series, pool.grid, fee_rate, range.start, range.end, initial_index, initial_cash)?;
        Ok(Self {
            low,
            features,
            pool,
            bank,
            stride: MINUTE,
            curve: None,
        })
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride.max(1);
        self
    }

    /// Records net value and position after every second.
    pub fn record_curve(mut self) -> Self {
        let first = EquityPoint {
            ts: self.low.lob().timestamp,
            net_value: self.low.net_value(),
            position: self.low.account().position,
        };
        self.curve = Some(vec![first]);
        self.low = self.low.record_trades();
        self
    }

    pub fn curve(&self) -> &[EquityPoint] {
        self.curve.as_deref().unwrap_or(&[])
    }

    pub fn trades(&self) -> &[TradeRecord] {
        self.low.trades()
    }

    pub fn low(&self) -> &LowLevelEnv<'a> {
        &self.low
    }

    pub fn done(&self) -> bool {
        self.low.done()
    }

    pub fn net_value(&self) -> f64 {
        self.low.net_value()
    }

    pub fn observation(&self) -> Observation {
        Observation {
            t: self.low.series().completed_minutes_before(self.low.cursor()),
            position_index: self.low.position_index(),
        }
    }

    pub fn state(&self) -> Vec<f64> {
        state_vector(self.features, self.pool.n(), self.observation())
    }

    /// Dispatches the agent at (`label`, current position) for one stride. The reward is
    /// the change in marked net value over the step, including any corrective order.
    pub fn step(&mut self, label: usize) -> Result<HighStep, RouterError> {
        let m = self.pool.m();
        if label == 0 || label > m {
            return Err(RouterError::BadLabel { label, m });
        }
        if self.low.done() {
            return Err(ExecError::Env("step on finished episode".into()).into());
        }
        let minute_ts = self.low.lob().timestamp;
        let v0 = self.low.net_value();
        let clips_before = self.low.clip_count();
        let p = self.low.position_index();
        let on_grid = self.pool.grid.position(p);
        let snapped = self.low.account().position != on_grid;
        if snapped {
            self.low.trade_to(on_grid)?;
        }
        let p = self.low.position_index();
        let cell = self.pool.cell(label, p);
        let agent = self
            .bank
            .get(&cell.agent_checkpoint)
            .ok_or_else(|| RouterError::MissingAgent(cell.agent_checkpoint.clone()))?;
        let corrective = self.low.net_value() - v0;
        let mut reward = corrective;
        let mut low_steps = 0;
        while low_steps < self.stride && !self.low.done() {
            let obs = self.low.observation();
            let out = self.low.step(agent.act(obs.t, obs.position_index))?;
            reward += out.reward;
            low_steps += 1;
            if let Some(curve) = self.curve.as_mut() {
                curve.push(EquityPoint {
                    ts: self.low.lob().timestamp,
                    net_value: self.low.net_value(),
                    position: self.low.account().position,
                });
            }
        }
        Ok(HighStep {
            reward,
            done: self.low.done(),
            next: self.observation(),
            label,
            position_before: p,
            minute_ts,
            low_steps,
            clipped: self.low.clip_count() - clips_before,
            snapped,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RouterConfig {
    pub episodes: usize,
    /// Episode length in minutes; episodes start at random minute boundaries.
    pub episode_minutes: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay: f64,
    pub batch_size: usize,
    pub update_ratio: f64,
    pub buffer_capacity: usize,
    pub seed: u64,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self {
            episodes: 20,
            episode_minutes: 60,
            hidden: vec![128, 128],
            lr: 5e-4,
            gamma: 0.99,
            tau: 0.005,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay: 0.5,
            batch_size: 512,
            update_ratio: 4.0,
            buffer_capacity: 1_000_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterLog {
    pub episode: usize,
    pub steps: usize,
    pub loss_td: f64,
    pub epsilon: f64,
    pub episode_reward: f64,
}

/// The router's value network: input is the minute-level feature row plus the encoded
/// position, one output per trend label.
#[derive(Debug, Clone, PartialEq)]
pub struct RouterNet {
    pub net: ValueNet,
}

impl RouterNet {
    /// Greedy 1-based label for a state vector.
    pub fn choose(&self, state: &[f64]) -> usize {
        argmax(&self.net.forward_batch(state, 1)) + 1
    }
}

/// Runs the greedy router over `env` to the end and returns the chosen labels.
pub fn run_router(router: &RouterNet, env: &mut HighLevelEnv<'_>) -> Result<Vec<HighStep>, RouterError> {
    let mut steps = Vec::new();
    while !env.done() {
        let label = router.choose(&env.state());
        steps.push(env.step(label)?);
    }
    Ok(steps)
}

/// Share of steps choosing each label, in label order.
pub fn selection_histogram(steps: &[HighStep], m: usize) -> Vec<f64> {
    let mut counts = vec![0.0; m];
    for s in steps {
        counts[s.label - 1] += 1.0;
    }
    let total = steps.len().max(1) as f64;
    counts.iter().map(|c| c / total).collect()
}

pub const SELECTION_LOG_HEADER: &str = "minute_ts,position_before,label_chosen,reward";

pub fn write_selection_log(steps: &[HighStep], mut w: impl std::io::Write) -> std::io::Result<()> {
    writeln!(w, "{SELECTION_LOG_HEADER}")?;
    for s in steps {
        writeln!(w, "{},{},{},{}", s.minute_ts, s.position_before, s.label, s.reward)?;
    }
    Ok(())
}

/// What the router trains on.
#[derive(Clone, Copy)]
pub struct RouterTask<'a> {
    pub series: &'a MarketSeries,
    pub features: &'a FeatureMatrix,
    pub pool: &'a AgentPool,
    pub bank: &'a AgentBank,
    pub fee_rate: f64,
}

/// Plain double DQN over the minute-level MDP (no teacher term).
pub fn train_router(task: &RouterTask<'_>, cfg: &RouterConfig) -> Result<(RouterNet, Vec<RouterLog>), RouterError> {
    if cfg.episodes == 0 || cfg.episode_minutes == 0 || cfg.batch_size == 0 || cfg.buffer_capacity < cfg.batch_size {
        return Err(LearnError::Config("router needs episodes, episode length and a buffer holding one batch".into()).into());
    }
    let m = task.pool.m();
    let n = task.pool.n();
    let mut sizes = vec![task.features.dim + 1];
    sizes.extend(&cfg.hidden);
    sizes.push(m);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut online = ValueNet::new(&sizes, rng.random())?;
    let mut target = online.clone();
    let mut opt = Adam::new(online.params().len(), cfg.lr);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity)?;

    let len = cfg.episode_minutes * MINUTE + 1;
    let total = task.series.len();
    let starts: Vec<usize> = if total <= len {
        vec![0]
    } else {
        (0..=(total - len) / MINUTE).map(|k| k * MINUTE).collect()
    };
    let planned = cfg.episodes * cfg.episode_minutes;
    let loss_cfg = LossConfig {
        gamma: cfg.gamma,
        alpha: 0.0,
        temperature: 1.0,
    };
    let mut steps = 0usize;
    let mut log = Vec::with_capacity(cfg.episodes);
    for episode in 0..cfg.episodes {
        let start = starts[rng.random_range(0..starts.len())];
        let range = start..(start + len).min(total);
        let initial = rng.random_range(0..n);
        let mut env = HighLevelEnv::new(task.series, task.features, task.pool, task.bank, task.fee_rate, range, initial, 0.0)?;
        let mut collected = 0;
        let mut ep_reward = 0.0;
        let mut eps = cfg.epsilon_start;
        while !env.done() {
            let obs = env.observation();
            let horizon = (cfg.epsilon_decay * planned as f64).max(1.0);
            eps = cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * (steps as f64 / horizon).min(1.0);
            let label = if rng.random::<f64>() < eps {
                rng.random_range(1..=m)
            } else {
                argmax(&online.forward_batch(&state_vector(task.features, n, obs), 1)) + 1
            };
            let out = env.step(label)?;
            ep_reward += out.reward;
            steps += 1;
            collected += 1;
            buffer.push(Transition {
                state: obs,
                action: label - 1,
                reward: out.reward,
                next_state: out.next,
                done: out.done,
                qstar_row: None,
            });
        }
        let (mut td_sum, mut updates) = (0.0, 0usize);
        if buffer.len() >= cfg.batch_size {
            let n_grad = (cfg.update_ratio * collected as f64 / cfg.batch_size as f64).ceil() as usize;
            for _ in 0..n_grad {
                let batch = buffer.sample(&mut rng, cfg.batch_size)?;
                let out = qteacher_loss(&online, &target, task.features, n, &batch, &loss_cfg)?;
                if !out.loss.is_finite() {
                    return Err(LearnError::NonFinite {
                        epoch: episode,
                        step: updates,
                        td: out.td,
                        kl: 0.0,
                    }
                    .into());
                }
                opt.step(online.params_mut(), &out.grads);
                soft_update(&mut target, &online, cfg.tau)?;
                td_sum += out.td;
                updates += 1;
            }
        }
        log.push(RouterLog {
            episode,
            steps,
            loss_td: td_sum / updates.max(1) as f64,
            epsilon: eps,
            episode_reward: ep_reward,
        });
    }
    Ok((RouterNet { net: online }, log))
}
