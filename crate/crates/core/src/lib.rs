//! Hierarchical reinforcement learning for second-level trading: market data and
//! features, book execution, dynamic-programming oracles, value-network learners,
//! an agent pool keyed by market trend, a minute-level router, and backtesting.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backtest;
pub mod execution;
pub mod learner;
pub mod marketdata;
pub mod oracle;
pub mod pool;
pub mod router;
