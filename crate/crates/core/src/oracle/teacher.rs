//! Tabular setting for checking the teacher-regularized Bellman operator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::OracleError;

/// Action-value table, row-major `(state, action)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn get(&self, x: usize, a: usize) -> f64 {
        self.values[x * self.n_actions + a]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.values[x * self.n_actions..(x + 1) * self.n_actions]
    }

    pub fn max_row(&self, x: usize) -> f64 {
        self.row(x).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Finite MDP with transition kernel `T(y | x, a)` and reward `r(x, a, y)`, both stored
/// row-major as `(x, a, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub transition: Vec<f64>,
    pub reward: Vec<f64>,
    pub gamma: f64,
}

impl ToyMdp {
    pub fn new(n_states: usize, n_actions: usize, transition: Vec<f64>, reward: Vec<f64>, gamma: f64) -> Result<Self, OracleError> {
        let mdp = Self {
            n_states,
            n_actions,
            transition,
            reward,
            gamma,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Dense random MDP with rewards uniform in `[-1, 1]`.
    pub fn random(seed: u64, n_states: usize, n_actions: usize, gamma: f64) -> Result<Self, OracleError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let size = n_states * n_actions * n_states;
        let mut transition = Vec::with_capacity(size);
        for _ in 0..n_states * n_actions {
            let w: Vec<f64> = (0..n_states).map(|_| rng.random::<f64>() + 1e-3).collect();
            let total: f64 = w.iter().sum();
            transition.extend(w.iter().map(|v| v / total));
        }
        let reward = (0..size).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self::new(n_states, n_actions, transition, reward, gamma)
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        let size = self.n_states * self.n_actions * self.n_states;
        if self.n_states == 0 || self.n_actions == 0 || self.transition.len() != size || self.reward.len() != size {
            return Err(OracleError::Mdp("shape mismatch".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(OracleError::Mdp(format!("gamma must be in (0, 1), got {}", self.gamma)));
        }
        for (i, row) in self.transition.chunks(self.n_states).enumerate() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-12 {
                return Err(OracleError::Mdp(format!("transition row {i} is not stochastic")));
            }
        }
        Ok(())
    }

    fn idx(&self, x: usize, a: usize, y: usize) -> usize {
        (x * self.n_actions + a) * self.n_states + y
    }

    /// `sum_y T(y|x,a) (r(x,a,y) + gamma * max_b q(y,b))`.
    pub fn backup(&self, q: &QTable, x: usize, a: usize) -> f64 {
        (0..self.n_states)
            .map(|y| {
                let i = self.idx(x, a, y);
                self.transition[i] * (self.reward[i] + self.gamma * q.max_row(y))
            })
            .sum()
    }

    /// Standard Bellman optimality operator.
    pub fn bellman_step(&self, q: &QTable) -> QTable {
        let mut out = QTable::zeros(self.n_states, self.n_actions);
        for x in 0..self.n_states {
            for a in 0..self.n_actions {
                out.values[x * self.n_actions + a] = self.backup(q, x, a);
            }
        }
        out
    }

    /// Value iteration until successive iterates differ by less than `tol` in sup norm.
    pub fn optimal_q(&self, tol: f64) -> QTable {
        let mut q = QTable::zeros(self.n_states, self.n_actions);
        loop {
            let next = self.bellman_step(&q);
            let d = next.sup_distance(&q);
            q = next;
            if d < tol {
                return q;
            }
        }
    }
}

/// One application of the teacher operator
/// `Hq(x,a) = lambda * sum_y T(y|x,a)(r + gamma max_b q(y,b))
///          + (1 - lambda) * (mean_a q(x,a) + Re(x,a))`,
/// where `Re(x,a) = q*(x,a) - mean_a q*(x,a)`.
pub fn teacher_operator_step(q: &QTable, mdp: &ToyMdp, lambda: f64, qstar: &QTable) -> Result<QTable, OracleError> {
    let shape = (mdp.n_states, mdp.n_actions);
    if (q.n_states, q.n_actions) != shape || (qstar.n_states, qstar.n_actions) != shape {
        return Err(OracleError::Mdp("table shapes disagree with the MDP".into()));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(OracleError::Mdp(format!("lambda must be in [0, 1], got {lambda}")));
    }
    let k = mdp.n_actions as f64;
    let mut out = QTable::zeros(shape.0, shape.1);
    for x in 0..mdp.n_states {
        let mean_q = q.row(x).iter().sum::<f64>() / k;
        let mean_star = qstar.row(x).iter().sum::<f64>() / k;
        for a in 0..mdp.n_actions {
            let re = qstar.get(x, a) - mean_star;
            out.values[x * mdp.n_actions + a] = lambda * mdp.backup(q, x, a) + (1.0 - lambda) * (mean_q + re);
        }
    }
    Ok(out)
}
