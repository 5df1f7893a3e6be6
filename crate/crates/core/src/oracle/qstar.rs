use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::execution::{execute_market_order, ActionGrid, ExecError, LowLevelEnv};
use crate::learner::Transition;
use crate::marketdata::LobSnapshot;

use super::OracleError;

/// Marks a (t, p, a) entry whose order cannot be filled by the book.
pub const INFEASIBLE: f64 = f64::MIN;

const MAGIC: &[u8; 8] = b"QSTAR\0\0\x01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QStarMeta {
    pub grid: ActionGrid,
    pub fee_rate: f64,
    pub start_ts: i64,
    pub end_ts: i64,
    pub n: usize,
    pub n_actions: usize,
}

/// Optimal action values `Q*[t, p, a]` over one slice of snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct QStarTable {
    pub meta: QStarMeta,
    values: Vec<f64>,
}

impl QStarTable {
    pub fn len(&self) -> usize {
        self.meta.n
    }

    pub fn is_empty(&self) -> bool {
        self.meta.n == 0
    }

    pub fn n_actions(&self) -> usize {
        self.meta.n_actions
    }

    pub fn get(&self, t: usize, p: usize, a: usize) -> f64 {
        let k = self.meta.n_actions;
        self.values[(t * k + p) * k + a]
    }

    pub fn row(&self, t: usize, p: usize) -> &[f64] {
        let k = self.meta.n_actions;
        &self.values[(t * k + p) * k..(t * k + p + 1) * k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Best value from `(t, p)`, skipping infeasible entries.
    pub fn best(&self, t: usize, p: usize) -> f64 {
        max_feasible(self.row(t, p))
    }

    /// Greedy action at `(t, p)`. Ties keep the current position, then take the lowest index.
    pub fn greedy_action(&self, t: usize, p: usize) -> usize {
        let row = self.row(t, p);
        let best = max_feasible(row);
        if row[p] == best {
            return p;
        }
        row.iter().position(|&v| v == best).expect("best is attained")
    }

    pub fn write_binary(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.meta.n as u64).to_le_bytes())?;
        w.write_all(&(self.meta.n_actions as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read, meta: QStarMeta) -> Result<Self, OracleError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(OracleError::Format("bad magic".into()));
        }
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let n = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let k = u64::from_le_bytes(word) as usize;
        if n != meta.n || k != meta.n_actions {
            return Err(OracleError::Format(format!("shape ({n}, {k}) disagrees with sidecar")));
        }
        let mut values = Vec::with_capacity(n * k * k);
        for _ in 0..n * k * k {
            r.read_exact(&mut word)?;
            values.push(f64::from_le_bytes(word));
        }
        Ok(Self { meta, values })
    }

    pub fn sidecar_json(&self) -> String {
        serde_json::to_string_pretty(&self.meta).expect("meta serializes")
    }
}

fn max_feasible(row: &[f64]) -> f64 {
    row.iter()
        .copied()
        .filter(|&v| v != INFEASIBLE)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Backward recursion over `lobs`:
/// `Q*[t,p,a] = max_a' Q*[t+1,a,a'] + a * bid_{t+1} - (p * bid_t + E_t(a - p))`,
/// with `Q*[N-1] = 0` and `E_t(0) = 0`. Orders the book cannot fill are [`INFEASIBLE`].
pub fn build_q_star(lobs: &[LobSnapshot], grid: ActionGrid, fee_rate: f64) -> Result<QStarTable, OracleError> {
    let n = lobs.len();
    if n == 0 {
        return Err(OracleError::Empty);
    }
    let k = grid.n_actions;
    let positions = grid.positions();
    let mut values = vec![0.0; n * k * k];
    let mut next_best = vec![0.0; k];
    let mut costs = vec![0.0; k * k];
    for t in (0..n.saturating_sub(1)).rev() {
        let lob = &lobs[t];
        for p in 0..k {
            for a in 0..k {
                costs[p * k + a] = if a == p {
                    0.0
                } else {
                    match execute_market_order(lob, positions[a] - positions[p], fee_rate) {
                        Ok(f) => f.cost,
                        Err(ExecError::InsufficientDepth { .. }) => INFEASIBLE,
                        Err(e) => return Err(e.into()),
                    }
                };
            }
        }
        let (bid, bid_next) = (lob.best_bid(), lobs[t + 1].best_bid());
        for (a, nb) in next_best.iter_mut().enumerate() {
            let base = ((t + 1) * k + a) * k;
            *nb = max_feasible(&values[base..base + k]);
        }
        for p in 0..k {
            let held_before = positions[p] * bid;
            for a in 0..k {
                let cost = costs[p * k + a];
                values[(t * k + p) * k + a] = if cost == INFEASIBLE {
                    INFEASIBLE
                } else {
                    let reward = positions[a] * bid_next - (held_before + cost);
                    next_best[a] + reward
                };
            }
        }
    }
    Ok(QStarTable {
        meta: QStarMeta {
            grid,
            fee_rate,
            start_ts: lobs[0].timestamp,
            end_ts: lobs[n - 1].timestamp,
            n,
            n_actions: k,
        },
        values,
    })
}

/// Follows `argmax_a Q*[t, p, a]` through `env` from its current state to the end of the
/// episode. Each transition carries the Q* row of its state.
pub fn optimal_rollout(qstar: &QStarTable, env: &mut LowLevelEnv<'_>) -> Result<Vec<Transition>, OracleError> {
    let (start, end) = env.bounds();
    if end - start != qstar.len() || env.grid().n_actions != qstar.n_actions() {
        return Err(OracleError::Misaligned {
            table: qstar.len(),
            episode: end - start,
        });
    }
    let mut out = Vec::with_capacity(env.remaining_steps());
    while !env.done() {
        let obs = env.observation();
        let local = obs.t - start;
        let action = qstar.greedy_action(local, obs.position_index);
        let step = env.step(action)?;
        out.push(Transition {
            state: obs,
            action,
            reward: step.reward,
            next_state: step.next,
            done: step.done,
            qstar_row: Some(qstar.row(local, obs.position_index).to_vec()),
        });
    }
    Ok(out)
}

/// Centered Q* row: `q*(x, a) - mean_a q*(x, a)` over the feasible entries.
/// Infeasible entries stay [`INFEASIBLE`].
pub fn regularizer_row(qstar: &QStarTable, t: usize, p: usize) -> Vec<f64> {
    center(qstar.row(t, p))
}

pub(crate) fn center(row: &[f64]) -> Vec<f64> {
    let feasible: Vec<f64> = row.iter().copied().filter(|&v| v != INFEASIBLE).collect();
    let mean = feasible.iter().sum::<f64>() / feasible.len() as f64;
    row.iter()
        .map(|&v| if v == INFEASIBLE { INFEASIBLE } else { v - mean })
        .collect()
}
