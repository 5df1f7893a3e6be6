//! Market-order execution against the book, account accounting, and the
//! second-level trading environment.

use serde::{Deserialize, Serialize};

use crate::marketdata::{FeatureMatrix, LobSnapshot, MarketSeries};

/// Commission preset matching the 0.015% exchange-table rate.
pub const FEE_TABLE: f64 = 0.000_15;
/// Commission preset matching the 0.02% rate.
pub const FEE_TEXT: f64 = 0.000_2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExecError {
    #[error("insufficient depth: requested {requested}, fillable {fillable}")]
    InsufficientDepth { requested: f64, fillable: f64 },
    #[error("invalid order: {0}")]
    InvalidOrder(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("environment misuse: {0}")]
    Env(String),
}

/// Target-position grid `{0, H/(n-1), ..., H}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionGrid {
    pub max_position: f64,
    pub n_actions: usize,
}

impl ActionGrid {
    pub fn new(max_position: f64, n_actions: usize) -> Result<Self, ExecError> {
        if !(max_position.is_finite() && max_position > 0.0) {
            return Err(ExecError::InvalidGrid(format!("max position must be > 0, got {max_position}")));
        }
        if n_actions < 2 {
            return Err(ExecError::InvalidGrid(format!("need at least 2 actions, got {n_actions}")));
        }
        Ok(Self {
            max_position,
            n_actions,
        })
    }

    pub fn position(&self, index: usize) -> f64 {
        debug_assert!(index < self.n_actions);
        if index + 1 == self.n_actions {
            self.max_position
        } else {
            self.max_position * index as f64 / (self.n_actions - 1) as f64
        }
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.n_actions).map(|i| self.position(i)).collect()
    }

    pub fn nearest_index(&self, position: f64) -> usize {
        let step = self.max_position / (self.n_actions - 1) as f64;
        ((position / step).round().max(0.0) as usize).min(self.n_actions - 1)
    }

    /// `index / (n - 1)`, the position encoding fed to value networks.
    pub fn encode(&self, index: usize) -> f64 {
        index as f64 / (self.n_actions - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fill {
    pub signed_size: f64,
    /// Signed cash outflow: positive for buys, negative (proceeds) for sells.
    pub cost: f64,
    pub fee: f64,
    /// Pre-fee average price.
    pub vwap: f64,
    pub levels_consumed: usize,
}

const DEPTH_TOLERANCE: f64 = 1e-12;

/// Quantity available on the side a buy (`true`) or sell walks.
pub fn fillable(lob: &LobSnapshot, buy: bool) -> f64 {
    let side = if buy { &lob.asks } else { &lob.bids };
    side.iter().map(|l| l.qty).sum()
}

/// Walks the opposite side of the book level by level.
///
/// Buys pay `gross * (1 + fee)`; sells receive `gross * (1 - fee)`, so the commission
/// always reduces net value.
pub fn execute_market_order(lob: &LobSnapshot, signed_size: f64, fee_rate: f64) -> Result<Fill, ExecError> {
    if !(signed_size.is_finite() && signed_size != 0.0) {
        return Err(ExecError::InvalidOrder(format!("size must be non-zero, got {signed_size}")));
    }
    if !(0.0..1.0).contains(&fee_rate) {
        return Err(ExecError::InvalidOrder(format!("fee rate must be in [0, 1), got {fee_rate}")));
    }
    let buy = signed_size > 0.0;
    let side = if buy { &lob.asks } else { &lob.bids };
    let size = signed_size.abs();
    let mut remaining = size;
    let mut gross = 0.0;
    let mut levels = 0;
    for level in side {
        if remaining <= 0.0 {
            break;
        }
        let take = level.qty.min(remaining);
        gross += level.price * take;
        remaining -= take;
        levels += 1;
    }
    // level sums drift by a few ulps, so an order for exactly the visible depth must fill
    if remaining > DEPTH_TOLERANCE * size {
        return Err(ExecError::InsufficientDepth {
            requested: size,
            fillable: fillable(lob, buy),
        });
    }
    let fee = gross * fee_rate;
    let cost = if buy { gross * (1.0 + fee_rate) } else { -(gross * (1.0 - fee_rate)) };
    Ok(Fill {
        signed_size,
        cost,
        fee,
        vwap: gross / size,
        levels_consumed: levels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccountState {
    pub cash: f64,
    pub position: f64,
    pub commission_rate: f64,
}

impl AccountState {
    pub fn apply(&mut self, fill: &Fill) {
        self.cash -= fill.cost;
        self.position += fill.signed_size;
    }
}

/// Cash plus position marked at the best bid.
pub fn net_value(account: &AccountState, lob: &LobSnapshot) -> f64 {
    account.cash + account.position * lob.best_bid()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub ts: i64,
    pub side: String,
    pub size: f64,
    pub vwap: f64,
    pub cost: f64,
    pub fee: f64,
    pub position_after: f64,
    pub cash_after: f64,
    pub net_value: f64,
}

pub const TRADE_LOG_HEADER: &str = "ts,side,size,vwap,cost,fee,position_after,cash_after,net_value";

impl TradeRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.ts, self.side, self.size, self.vwap, self.cost, self.fee, self.position_after, self.cash_after, self.net_value
        )
    }
}

/// Agent-facing state: the feature row for time `t` plus the position on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    pub t: usize,
    pub position_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub next: Observation,
    pub fill: Option<Fill>,
    /// The order was cut down to the available depth.
    pub clipped: bool,
}

/// Second-level MDP over `[start, end)` of a series. An episode with `N = end - start`
/// snapshots has `N - 1` steps; acting at `t` trades against the book at `t` and the
/// reward marks the new position at the best bid of `t + 1`.
#[derive(Debug, Clone)]
pub struct LowLevelEnv<'a> {
    series: &'a MarketSeries,
    features: Option<&'a FeatureMatrix>,
    grid: ActionGrid,
    account: AccountState,
    start: usize,
    end: usize,
    cursor: usize,
    clip_count: usize,
    trades: Option<Vec<TradeRecord>>,
}

impl<'a> LowLevelEnv<'a> {
    /// Starts at `start` holding grid position `initial_index`, with `initial_cash` in cash.
    pub fn new(
        series: &'a MarketSeries,
        grid: ActionGrid,
        fee_rate: f64,
        start: usize,
        end: usize,
        initial_index: usize,
        initial_cash: f64,
    ) -> Result<Self, ExecError> {
        if start + 1 >= end || end > series.len() {
            return Err(ExecError::Env(format!(
                "episode {start}..{end} needs at least 2 snapshots within length {}",
                series.len()
            )));
        }
        if initial_index >= grid.n_actions {
            return Err(ExecError::Env(format!("initial index {initial_index} off grid")));
        }
        if !(0.0..1.0).contains(&fee_rate) {
            return Err(ExecError::InvalidOrder(format!("fee rate must be in [0, 1), got {fee_rate}")));
        }
        Ok(Self {
            series,
            features: None,
            grid,
            account: AccountState {
                cash: initial_cash,
                position: grid.position(initial_index),
                commission_rate: fee_rate,
            },
            start,
            end,
            cursor: start,
            clip_count: 0,
            trades: None,
        })
    }

    pub fn with_features(mut self, features: &'a FeatureMatrix) -> Self {
        self.features = Some(features);
        self
    }

    pub fn record_trades(mut self) -> Self {
        self.trades = Some(Vec::new());
        self
    }

    pub fn series(&self) -> &'a MarketSeries {
        self.series
    }

    pub fn features(&self) -> Option<&'a FeatureMatrix> {
        self.features
    }

    pub fn grid(&self) -> &ActionGrid {
        &self.grid
    }

    pub fn account(&self) -> &AccountState {
        &self.account
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn bounds(&self) -> (usize, usize) {
        (self.start, self.end)
    }

    pub fn done(&self) -> bool {
        self.cursor + 1 >= self.end
    }

    pub fn remaining_steps(&self) -> usize {
        self.end - 1 - self.cursor
    }

    pub fn clip_count(&self) -> usize {
        self.clip_count
    }

    pub fn trades(&self) -> &[TradeRecord] {
        self.trades.as_deref().unwrap_or(&[])
    }

    pub fn take_trades(&mut self) -> Vec<TradeRecord> {
        self.trades.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn position_index(&self) -> usize {
        self.grid.nearest_index(self.account.position)
    }

    pub fn observation(&self) -> Observation {
        Observation {
            t: self.cursor,
            position_index: self.position_index(),
        }
    }

    pub fn lob(&self) -> &'a LobSnapshot {
        &self.series.lobs[self.cursor]
    }

    pub fn net_value(&self) -> f64 {
        net_value(&self.account, self.lob())
    }

    /// Trades toward `target_position` at the current book, clipping to available depth.
    /// Returns the fill (if any) and whether it was clipped. Does not advance time.
    pub fn trade_to(&mut self, target_position: f64) -> Result<(Option<Fill>, bool), ExecError> {
        let lob = self.lob();
        let delta = target_position - self.account.position;
        if delta == 0.0 {
            return Ok((None, false));
        }
        let (fill, clipped) = match execute_market_order(lob, delta, self.account.commission_rate) {
            Ok(f) => (f, false),
            Err(ExecError::InsufficientDepth { fillable, .. }) => {
                self.clip_count += 1;
                if fillable <= 0.0 {
                    return Ok((None, true));
                }
                let f = execute_market_order(lob, fillable.copysign(delta), self.account.commission_rate)?;
                (f, true)
            }
            Err(e) => return Err(e),
        };
        self.account.cash -= fill.cost;
        if clipped {
            self.account.position += fill.signed_size;
        } else {
            self.account.position = target_position;
        }
        if let Some(trades) = self.trades.as_mut() {
            trades.push(TradeRecord {
                ts: lob.timestamp,
                side: if delta > 0.0 { "buy" } else { "sell" }.into(),
                size: fill.signed_size.abs(),
                vwap: fill.vwap,
                cost: fill.cost,
                fee: fill.fee,
                position_after: self.account.position,
                cash_after: self.account.cash,
                net_value: net_value(&self.account, lob),
            });
        }
        Ok((Some(fill), clipped))
    }

    /// One second: move to grid position `target`, then advance the clock.
    ///
    /// Reward is `P_{t+1} * bid_{t+1} - (P_t * bid_t + E_t)`.
    pub fn step(&mut self, target: usize) -> Result<StepOutcome, ExecError> {
        if self.done() {
            return Err(ExecError::Env("step on finished episode".into()));
        }
        if target >= self.grid.n_actions {
            return Err(ExecError::Env(format!("action {target} off grid")));
        }
        let t = self.cursor;
        let held_before = self.account.position * self.series.lobs[t].best_bid();
        let (fill, clipped) = self.trade_to(self.grid.position(target))?;
        let cost = fill.map_or(0.0, |f| f.cost);
        self.cursor += 1;
        let held_after = self.account.position * self.series.lobs[self.cursor].best_bid();
        let reward = held_after - (held_before + cost);
        Ok(StepOutcome {
            reward,
            done: self.done(),
            next: self.observation(),
            fill,
            clipped,
        })
    }

    /// Market value if the whole position were sold now (the liquidation variant).
    pub fn liquidation_value(&self) -> f64 {
        if self.account.position <= 0.0 {
            return self.account.cash;
        }
        let lob = self.lob();
        let size = self.account.position.min(fillable(lob, false));
        match execute_market_order(lob, -size, self.account.commission_rate) {
            Ok(f) => self.account.cash - f.cost + (self.account.position - size) * lob.best_bid(),
            Err(_) => self.net_value(),
        }
    }
}
