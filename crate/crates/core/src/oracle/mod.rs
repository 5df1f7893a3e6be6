//! Optimal action values by backward dynamic programming, greedy optimal rollouts,
//! and the tabular teacher operator.

mod qstar;
mod teacher;

pub use qstar::{build_q_star, optimal_rollout, regularizer_row, QStarMeta, QStarTable, INFEASIBLE};
pub use teacher::{teacher_operator_step, QTable, ToyMdp};

use crate::execution::ExecError;

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("empty slice")]
    Empty,
    #[error("Q* table covers {table} steps but the episode has {episode}")]
    Misaligned { table: usize, episode: usize },
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("invalid MDP: {0}")]
    Mdp(String),
    #[error("bad Q* file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
