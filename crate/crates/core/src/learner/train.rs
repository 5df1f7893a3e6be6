use std::collections::HashMap;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::execution::{ActionGrid, LowLevelEnv};
use crate::marketdata::{FeatureMatrix, MarketSeries};
use crate::oracle::{build_q_star, optimal_rollout, QStarTable};

use super::loss::{argmax, encode_state, qteacher_loss, LossConfig};
use super::net::{soft_update, Adam, ValueNet};
use super::replay::{ReplayBuffer, Transition};
use super::LearnError;

/// Hyper-parameters of the low-level learner. With `alpha0 = 0` and `optimal_actor`
/// off this is plain double DQN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub chunks_per_epoch: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub alpha0: f64,
    /// Teacher weight halves every `alpha_half_life * planned gradient steps` steps.
    pub alpha_half_life: f64,
    pub temperature: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the planned environment steps over which epsilon decays.
    pub epsilon_decay: f64,
    pub batch_size: usize,
    /// Gradient steps per chunk are `ceil(update_ratio * collected / batch_size)`.
    pub update_ratio: f64,
    pub buffer_capacity: usize,
    pub optimal_actor: bool,
    pub initial_position: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            chunks_per_epoch: 4,
            hidden: vec![128, 128],
            lr: 5e-4,
            gamma: 0.99,
            tau: 0.005,
            alpha0: 128.0,
            alpha_half_life: 0.1,
            temperature: 1.0,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay: 0.5,
            batch_size: 512,
            update_ratio: 4.0,
            buffer_capacity: 1_000_000,
            optimal_actor: true,
            initial_position: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Double DQN without the teacher term or optimal-actor episodes.
    pub fn vanilla(mut self) -> Self {
        self.alpha0 = 0.0;
        self.optimal_actor = false;
        self
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: &str| Err(LearnError::Config(m.into()));
        if self.epochs == 0 || self.chunks_per_epoch == 0 {
            return bad("epochs and chunks per epoch must be positive");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("buffer capacity must hold at least one batch");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must be in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.tau) || self.alpha0 < 0.0 || self.temperature <= 0.0 || self.lr <= 0.0 {
            return bad("tau in [0, 1], alpha0 >= 0, temperature > 0 and lr > 0 required");
        }
        if self.alpha_half_life <= 0.0 || self.epsilon_decay <= 0.0 || self.update_ratio <= 0.0 {
            return bad("schedules need positive lengths");
        }
        Ok(())
    }

    /// Linear decay from `epsilon_start` to `epsilon_end` over the first
    /// `epsilon_decay * planned` steps, constant afterwards.
    pub fn epsilon(&self, step: usize, planned: usize) -> f64 {
        let horizon = (self.epsilon_decay * planned as f64).max(1.0);
        let frac = (step as f64 / horizon).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }

    /// `alpha0 * 0.5^(k / half_life)`.
    pub fn alpha(&self, step: usize, planned: usize) -> f64 {
        if self.alpha0 == 0.0 {
            return 0.0;
        }
        let half = (self.alpha_half_life * planned as f64).max(1.0);
        self.alpha0 * 0.5f64.powf(step as f64 / half)
    }
}

/// The market a low-level agent trades in.
#[derive(Debug, Clone, Copy)]
pub struct LowLevelTask<'a> {
    pub series: &'a MarketSeries,
    pub features: &'a FeatureMatrix,
    pub grid: ActionGrid,
    pub fee_rate: f64,
    pub initial_cash: f64,
}

impl<'a> LowLevelTask<'a> {
    pub fn new(series: &'a MarketSeries, features: &'a FeatureMatrix, grid: ActionGrid, fee_rate: f64) -> Result<Self, LearnError> {
        if features.rows() != series.len() {
            return Err(LearnError::Shape(format!(
                "{} feature rows for {} seconds",
                features.rows(),
                series.len()
            )));
        }
        Ok(Self {
            series,
            features,
            grid,
            fee_rate,
            initial_cash: 0.0,
        })
    }

    pub fn env(&self, range: Range<usize>, initial_position: usize) -> Result<LowLevelEnv<'a>, LearnError> {
        Ok(LowLevelEnv::new(
            self.series,
            self.grid,
            self.fee_rate,
            range.start,
            range.end,
            initial_position,
            self.initial_cash,
        )?
        .with_features(self.features))
    }

    pub fn input_dim(&self) -> usize {
        self.features.dim + 1
    }

    pub fn q_star(&self, range: Range<usize>) -> Result<QStarTable, LearnError> {
        Ok(build_q_star(&self.series.lobs[range], self.grid, self.fee_rate)?)
    }
}

/// Supplies training chunks as index ranges into the series.
pub trait ChunkSampler {
    fn next_chunk(&mut self, rng: &mut ChaCha8Rng) -> Range<usize>;
    /// Nominal chunk length, used to plan schedules.
    fn chunk_len(&self) -> usize;
}

/// Cycles through a fixed list of chunks.
#[derive(Debug, Clone)]
pub struct CyclicChunks {
    chunks: Vec<Range<usize>>,
    next: usize,
}

impl CyclicChunks {
    pub fn new(chunks: Vec<Range<usize>>) -> Result<Self, LearnError> {
        if chunks.is_empty() || chunks.iter().any(|c| c.end < c.start + 2) {
            return Err(LearnError::Config("chunks must be non-empty with at least 2 snapshots".into()));
        }
        Ok(Self { chunks, next: 0 })
    }
}

impl ChunkSampler for CyclicChunks {
    fn next_chunk(&mut self, _rng: &mut ChaCha8Rng) -> Range<usize> {
        let c = self.chunks[self.next].clone();
        self.next = (self.next + 1) % self.chunks.len();
        c
    }

    fn chunk_len(&self) -> usize {
        self.chunks[0].len()
    }
}

/// Greedy evaluation result over one or more episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    /// Mean total reward per episode.
    pub reward: f64,
    /// Mean length, in steps, of uninterrupted runs holding a non-zero position.
    pub ahl: f64,
}

/// Average holding length of a position path: mean length of maximal runs with index > 0.
pub fn average_holding_length(positions: &[usize]) -> f64 {
    let mut runs = Vec::new();
    let mut cur = 0usize;
    for &p in positions {
        if p > 0 {
            cur += 1;
        } else if cur > 0 {
            runs.push(cur);
            cur = 0;
        }
    }
    if cur > 0 {
        runs.push(cur);
    }
    if runs.is_empty() {
        0.0
    } else {
        runs.iter().sum::<usize>() as f64 / runs.len() as f64
    }
}

pub fn greedy_action(net: &ValueNet, features: &FeatureMatrix, n_positions: usize, obs: crate::execution::Observation, buf: &mut Vec<f64>) -> usize {
    buf.clear();
    encode_state(features, n_positions, obs, buf);
    argmax(&net.forward_batch(buf, 1))
}

/// Runs `net` greedily over each range starting from `initial_position`.
pub fn evaluate_greedy(net: &ValueNet, task: &LowLevelTask<'_>, ranges: &[Range<usize>], initial_position: usize) -> Result<EpisodeStats, LearnError> {
    let mut total = 0.0;
    let mut ahl = 0.0;
    let mut buf = Vec::new();
    for r in ranges {
        let mut env = task.env(r.clone(), initial_position)?;
        let mut path = Vec::with_capacity(r.len());
        while !env.done() {
            let obs = env.observation();
            let a = greedy_action(net, task.features, task.grid.n_actions, obs, &mut buf);
            let out = env.step(a)?;
            total += out.reward;
            path.push(out.next.position_index);
        }
        ahl += average_holding_length(&path);
    }
    let n = ranges.len().max(1) as f64;
    Ok(EpisodeStats {
        reward: total / n,
        ahl: ahl / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub loss_td: f64,
    pub loss_kl: f64,
    pub alpha: f64,
    pub eval_reward: f64,
    pub ahl: f64,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,steps,loss_td,loss_kl,alpha,eval_reward,ahl";

pub fn write_train_log(log: &[EpochLog], w: impl std::io::Write) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(w);
    for row in log {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Ranges evaluated after each epoch, possibly on another split.
#[derive(Debug, Clone)]
pub struct EvalSet<'a> {
    pub task: LowLevelTask<'a>,
    pub ranges: Vec<Range<usize>>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: ValueNet,
    /// Online network after each epoch.
    pub checkpoints: Vec<ValueNet>,
    pub log: Vec<EpochLog>,
    pub grad_steps: usize,
}

/// First cumulative environment-step count at which the evaluation reward reaches `threshold`.
pub fn steps_to_threshold(log: &[EpochLog], threshold: f64) -> Option<usize> {
    log.iter().find(|r| r.eval_reward >= threshold).map(|r| r.steps)
}

/// Trains a low-level agent: per chunk, one epsilon-greedy episode (plus an optimal-actor
/// episode when enabled) into the replay buffer, then gradient steps on the loss with
/// soft target updates. Evaluates greedily after each epoch.
pub fn train_low_level(
    task: &LowLevelTask<'_>,
    sampler: &mut dyn ChunkSampler,
    cfg: &TrainConfig,
    eval: Option<&EvalSet<'_>>,
) -> Result<TrainOutcome, LearnError> {
    cfg.validate()?;
    let k = task.grid.n_actions;
    if cfg.initial_position >= k {
        return Err(LearnError::Config("initial position off grid".into()));
    }
    let mut sizes = vec![task.input_dim()];
    sizes.extend(&cfg.hidden);
    sizes.push(k);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut online = ValueNet::new(&sizes, rng.random())?;
    let mut target = online.clone();
    let mut opt = Adam::new(online.params().len(), cfg.lr);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity)?;

    let steps_per_chunk = sampler.chunk_len().saturating_sub(1).max(1);
    let planned_env = cfg.epochs * cfg.chunks_per_epoch * steps_per_chunk;
    let collected_per_chunk = steps_per_chunk * if cfg.optimal_actor { 2 } else { 1 };
    let grad_per_chunk = (cfg.update_ratio * collected_per_chunk as f64 / cfg.batch_size as f64).ceil() as usize;
    let planned_grad = cfg.epochs * cfg.chunks_per_epoch * grad_per_chunk;
    let use_qstar = cfg.alpha0 > 0.0 || cfg.optimal_actor;
    let mut qstar_cache: HashMap<(usize, usize), QStarTable> = HashMap::new();

    let mut env_steps = 0usize;
    let mut grad_steps = 0usize;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut checkpoints = Vec::with_capacity(cfg.epochs);
    let mut buf = Vec::new();
    for epoch in 0..cfg.epochs {
        let (mut td_sum, mut kl_sum, mut n_updates) = (0.0, 0.0, 0usize);
        let mut alpha = cfg.alpha(grad_steps, planned_grad);
        let mut epoch_chunks = Vec::with_capacity(cfg.chunks_per_epoch);
        for _ in 0..cfg.chunks_per_epoch {
            let range = sampler.next_chunk(&mut rng);
            epoch_chunks.push(range.clone());
            let qstar = if use_qstar {
                if let std::collections::hash_map::Entry::Vacant(e) = qstar_cache.entry((range.start, range.end)) {
                    e.insert(task.q_star(range.clone())?);
                }
                Some(&qstar_cache[&(range.start, range.end)])
            } else {
                None
            };

            let mut env = task.env(range.clone(), cfg.initial_position)?;
            let mut collected = 0;
            while !env.done() {
                let obs = env.observation();
                let eps = cfg.epsilon(env_steps, planned_env);
                let action = if rng.random::<f64>() < eps {
                    rng.random_range(0..k)
                } else {
                    greedy_action(&online, task.features, k, obs, &mut buf)
                };
                let out = env.step(action)?;
                env_steps += 1;
                collected += 1;
                buffer.push(Transition {
                    state: obs,
                    action,
                    reward: out.reward,
                    next_state: out.next,
                    done: out.done,
                    qstar_row: qstar.filter(|_| cfg.alpha0 > 0.0).map(|q| q.row(obs.t - range.start, obs.position_index).to_vec()),
                });
            }
            if cfg.optimal_actor {
                let q = qstar.expect("optimal actor builds Q*");
                let mut env = task.env(range.clone(), cfg.initial_position)?;
                let rollout = optimal_rollout(q, &mut env)?;
                collected += rollout.len();
                buffer.extend(rollout);
            }

            if buffer.len() < cfg.batch_size {
                continue;
            }
            let n_grad = (cfg.update_ratio * collected as f64 / cfg.batch_size as f64).ceil() as usize;
            for _ in 0..n_grad {
                alpha = cfg.alpha(grad_steps, planned_grad);
                let batch = buffer.sample(&mut rng, cfg.batch_size)?;
                let loss_cfg = LossConfig {
                    gamma: cfg.gamma,
                    alpha,
                    temperature: cfg.temperature,
                };
                let out = qteacher_loss(&online, &target, task.features, k, &batch, &loss_cfg)?;
                if !out.loss.is_finite() || out.grads.iter().any(|g| !g.is_finite()) {
                    return Err(LearnError::NonFinite {
                        epoch,
                        step: grad_steps,
                        td: out.td,
                        kl: out.kl,
                    });
                }
                opt.step(online.params_mut(), &out.grads);
                soft_update(&mut target, &online, cfg.tau)?;
                td_sum += out.td;
                kl_sum += out.kl;
                n_updates += 1;
                grad_steps += 1;
            }
        }
        let stats = match eval {
            Some(e) => evaluate_greedy(&online, &e.task, &e.ranges, cfg.initial_position)?,
            None => evaluate_greedy(&online, task, &epoch_chunks, cfg.initial_position)?,
        };
        let denom = n_updates.max(1) as f64;
        log.push(EpochLog {
            epoch,
            steps: env_steps,
            loss_td: td_sum / denom,
            loss_kl: kl_sum / denom,
            alpha,
            eval_reward: stats.reward,
            ahl: stats.ahl,
        });
        checkpoints.push(online.clone());
    }
    Ok(TrainOutcome {
        net: online,
        checkpoints,
        log,
        grad_steps,
    })
}

/// Greedy actions of a network for every `(t, position)` in a range, computed in batches.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyTable {
    start: usize,
    n_positions: usize,
    actions: Vec<u8>,
}

impl GreedyTable {
    pub fn build(net: &ValueNet, features: &FeatureMatrix, n_positions: usize, range: Range<usize>) -> Self {
        const BLOCK: usize = 256;
        let mut actions = Vec::with_capacity(range.len() * n_positions);
        let k = net.output_dim();
        let mut x = Vec::new();
        let rows: Vec<usize> = range.clone().collect();
        for block in rows.chunks(BLOCK) {
            x.clear();
            for &t in block {
                for p in 0..n_positions {
                    encode_state(features, n_positions, crate::execution::Observation { t, position_index: p }, &mut x);
                }
            }
            let out = net.forward_batch(&x, block.len() * n_positions);
            actions.extend(out.chunks(k).map(|q| argmax(q) as u8));
        }
        Self {
            start: range.start,
            n_positions,
            actions,
        }
    }

    pub fn covers(&self, t: usize) -> bool {
        t >= self.start && t < self.start + self.actions.len() / self.n_positions
    }

    pub fn action(&self, t: usize, position: usize) -> usize {
        self.actions[(t - self.start) * self.n_positions + position] as usize
    }
}
