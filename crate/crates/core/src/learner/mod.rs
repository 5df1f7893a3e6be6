//! Value networks, replay, the teacher-regularized double-Q loss, and the low-level
//! training loop.

mod loss;
mod net;
mod replay;
mod train;

pub use loss::{argmax, encode_state, qteacher_loss, state_vector, teacher_kl, LossConfig, LossOutput};
pub use net::{soft_update, Adam, ForwardCache, ValueNet};
pub use replay::{ReplayBuffer, Transition};
pub use train::{
    average_holding_length, evaluate_greedy, greedy_action, steps_to_threshold, train_low_level, write_train_log, ChunkSampler,
    CyclicChunks, EpisodeStats, EpochLog, EvalSet, GreedyTable, LowLevelTask, TrainConfig, TrainOutcome, TRAIN_LOG_HEADER,
};

use serde::{Deserialize, Serialize};

use crate::execution::ExecError;
use crate::marketdata::FeatureMatrix;
use crate::oracle::OracleError;

#[derive(Debug, thiserror::Error)]
pub enum LearnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("replay holds {have} transitions, need {need}")]
    NotEnoughSamples { have: usize, need: usize },
    #[error("teacher term enabled but a transition has no Q* row")]
    MissingTeacher,
    #[error("non-finite loss at epoch {epoch}, gradient step {step} (td {td}, kl {kl})")]
    NonFinite { epoch: usize, step: usize, td: f64, kl: f64 },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-column z-scoring fitted on one feature matrix and applied to others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Columns with zero spread keep scale 1.
    pub fn fit(m: &FeatureMatrix) -> Self {
        let rows = m.rows().max(1) as f64;
        let mut mean = vec![0.0; m.dim];
        for r in 0..m.rows() {
            for (acc, v) in mean.iter_mut().zip(m.row(r)) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= rows);
        let mut var = vec![0.0; m.dim];
        for r in 0..m.rows() {
            for ((acc, v), mu) in var.iter_mut().zip(m.row(r)).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let s = (v / rows).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, m: &mut FeatureMatrix) -> Result<(), LearnError> {
        if m.dim != self.mean.len() {
            return Err(LearnError::Shape(format!("standardizer has {} columns, matrix {}", self.mean.len(), m.dim)));
        }
        for row in m.data.chunks_mut(m.dim) {
            for ((v, mu), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - mu) / s;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardizer_zero_mean_unit_std() {
        let mut m = FeatureMatrix::from_rows("t", 2, &[vec![1.0, 5.0], vec![3.0, 5.0], vec![5.0, 5.0]]);
        let s = Standardizer::fit(&m);
        s.apply(&mut m).unwrap();
        let col0: Vec<f64> = (0..3).map(|r| m.row(r)[0]).collect();
        assert!(col0.iter().sum::<f64>().abs() < 1e-12);
        let var = col0.iter().map(|v| v * v).sum::<f64>() / 3.0;
        assert!((var - 1.0).abs() < 1e-12);
        assert_eq!((0..3).map(|r| m.row(r)[1]).collect::<Vec<_>>(), vec![0.0; 3]);
    }
}
