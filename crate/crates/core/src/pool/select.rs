use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::execution::{ActionGrid, LowLevelEnv};
use crate::learner::GreedyTable;
use crate::marketdata::MarketSeries;

use super::segment::LabeledSpan;
use super::PoolError;

/// Id of the implicit always-flat candidate.
pub const FLAT_ID: &str = "flat";

/// A second-level decision rule usable as a pool member.
#[derive(Debug, Clone, PartialEq)]
pub enum PoolAgent {
    /// Greedy actions of a trained network, precomputed over a series.
    Table(GreedyTable),
    /// Always targets one grid index.
    Constant(usize),
}

impl PoolAgent {
    pub fn act(&self, t: usize, position: usize) -> usize {
        match self {
            PoolAgent::Table(table) => table.action(t, position),
            PoolAgent::Constant(k) => *k,
        }
    }

    pub fn covers(&self, range: &Range<usize>) -> bool {
        match self {
            PoolAgent::Table(table) => range.is_empty() || (table.covers(range.start) && table.covers(range.end - 1)),
            PoolAgent::Constant(_) => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: String,
    pub agent: PoolAgent,
}

/// A labeled span of the evaluation series, in second indices. The range includes the
/// first snapshot after the span so that every second of it is traded and marked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalSegment {
    pub label: usize,
    pub range: Range<usize>,
}

pub fn spans_to_segments(series: &MarketSeries, spans: &[LabeledSpan]) -> Result<Vec<EvalSegment>, PoolError> {
    spans
        .iter()
        .map(|s| {
            let start = series
                .index_of(s.start_ts)
                .ok_or_else(|| PoolError::Config(format!("segment start {} outside the series", s.start_ts)))?;
            let end = series.index_of(s.end_ts).map_or(series.len(), |i| i + 1);
            Ok(EvalSegment {
                label: s.label,
                range: start..end,
            })
        })
        .filter(|r: &Result<EvalSegment, PoolError>| r.as_ref().map_or(true, |s| s.range.len() >= 2))
        .collect()
}

/// Total reward of `agent` over `range` starting at grid index `initial_position`.
pub fn rollout_return(
    agent: &PoolAgent,
    series: &MarketSeries,
    grid: ActionGrid,
    fee_rate: f64,
    range: Range<usize>,
    initial_position: usize,
) -> Result<f64, PoolError> {
    if !agent.covers(&range) {
        return Err(PoolError::Config(format!("agent table does not cover {range:?}")));
    }
    let mut env = LowLevelEnv::new(series, grid, fee_rate, range.start, range.end, initial_position, 0.0)?;
    let mut total = 0.0;
    while !env.done() {
        let obs = env.observation();
        total += env.step(agent.act(obs.t, obs.position_index))?.reward;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolCell {
    pub label: usize,
    pub position_index: usize,
    pub agent_checkpoint: String,
    pub mean_return: f64,
    pub return_variance: f64,
    pub n_segments: usize,
}

/// `m` trend labels by `n` initial positions; cells stored label-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentPool {
    pub grid: ActionGrid,
    pub labels: Vec<String>,
    pub cells: Vec<PoolCell>,
}

impl AgentPool {
    pub fn m(&self) -> usize {
        self.labels.len()
    }

    pub fn n(&self) -> usize {
        self.grid.n_actions
    }

    /// Cell for 1-based `label` and grid index `position`.
    pub fn cell(&self, label: usize, position: usize) -> &PoolCell {
        &self.cells[(label - 1) * self.n() + position]
    }

    pub fn agent_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.cells.iter().map(|c| c.agent_checkpoint.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pool serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, PoolError> {
        let pool: Self = serde_json::from_str(s).map_err(|e| PoolError::Config(format!("bad pool manifest: {e}")))?;
        if pool.cells.len() != pool.m() * pool.n() {
            return Err(PoolError::Config("pool manifest is incomplete".into()));
        }
        Ok(pool)
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
}

/// For every (label, initial position) cell, rolls every candidate greedily over every
/// segment of that label and keeps the best mean return. Ties go to the lower return
/// variance, then to the earlier candidate. An always-flat candidate is appended as a
/// floor unless one with [`FLAT_ID`] is already present.
pub fn build_agent_pool(
    candidates: &[Candidate],
    series: &MarketSeries,
    segments: &[EvalSegment],
    grid: ActionGrid,
    fee_rate: f64,
    label_names: &[String],
) -> Result<AgentPool, PoolError> {
    let m = label_names.len();
    if candidates.is_empty() {
        return Err(PoolError::Config("no candidate agents".into()));
    }
    for label in 1..=m {
        if !segments.iter().any(|s| s.label == label) {
            return Err(PoolError::EmptyLabel(label));
        }
    }
    let mut all: Vec<Candidate> = candidates.to_vec();
    if !all.iter().any(|c| c.id == FLAT_ID) {
        all.push(Candidate {
            id: FLAT_ID.into(),
            agent: PoolAgent::Constant(0),
        });
    }
    let n = grid.n_actions;
    let jobs: Vec<(usize, usize, usize)> = (0..all.len())
        .flat_map(|c| (0..segments.len()).flat_map(move |s| (0..n).map(move |p| (c, s, p))))
        .collect();
    let returns: Vec<f64> = jobs
        .par_iter()
        .map(|&(c, s, p)| rollout_return(&all[c].agent, series, grid, fee_rate, segments[s].range.clone(), p))
        .collect::<Result<_, _>>()?;
    let ret = |c: usize, s: usize, p: usize| returns[(c * segments.len() + s) * n + p];

    let mut cells = Vec::with_capacity(m * n);
    for label in 1..=m {
        let segs: Vec<usize> = (0..segments.len()).filter(|&s| segments[s].label == label).collect();
        for p in 0..n {
            let mut best: Option<(usize, f64, f64)> = None;
            for c in 0..all.len() {
                let rs: Vec<f64> = segs.iter().map(|&s| ret(c, s, p)).collect();
                let (mean, var) = mean_var(&rs);
                let better = match best {
                    None => true,
                    Some((_, bm, bv)) => mean > bm || (mean == bm && var < bv),
                };
                if better {
                    best = Some((c, mean, var));
                }
            }
            let (c, mean, var) = best.expect("at least one candidate");
            cells.push(PoolCell {
                label,
                position_index: p,
                agent_checkpoint: all[c].id.clone(),
                mean_return: mean,
                return_variance: var,
                n_segments: segs.len(),
            });
        }
    }
    Ok(AgentPool {
        grid,
        labels: label_names.to_vec(),
        cells,
    })
}
