//! Policy backtests over a series, performance metrics, and rule-based baselines.

use serde::{Deserialize, Serialize};

use crate::execution::{ActionGrid, ExecError, LowLevelEnv, TradeRecord};
use crate::learner::average_holding_length;
use crate::marketdata::{imbalance, macd, DataError, MacdSpans, MarketSeries};
use crate::pool::PoolAgent;
use crate::router::{HighLevelEnv, HighStep, RouterError, RouterNet};

/// Seconds in a (365-day) year; returns are per second.
pub const SECONDS_PER_YEAR: f64 = 31_536_000.0;

#[derive(Debug, thiserror::Error)]
pub enum BacktestError {
    #[error("policy failed at second {cursor}: {message}")]
    Policy { cursor: usize, message: String },
    #[error("equity curve needs at least 2 points with a positive start, got {0}")]
    Curve(String),
    #[error("invalid strategy parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Router(#[from] RouterError),
}

/// A second-level decision rule: target grid index from time and current grid index.
pub trait LowLevelPolicy {
    fn act(&mut self, t: usize, position: usize) -> Result<usize, String>;
}

impl LowLevelPolicy for &PoolAgent {
    fn act(&mut self, t: usize, position: usize) -> Result<usize, String> {
        if let PoolAgent::Table(table) = self {
            if !table.covers(t) {
                return Err(format!("no greedy action cached for second {t}"));
            }
        }
        Ok(PoolAgent::act(self, t, position))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Signal {
    Buy,
    Sell,
    Hold,
}

/// Precomputed per-second signals: buy moves to the full position, sell to flat,
/// hold keeps the current position.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalPolicy {
    pub signals: Vec<Signal>,
    pub full_index: usize,
}

impl LowLevelPolicy for SignalPolicy {
    fn act(&mut self, t: usize, position: usize) -> Result<usize, String> {
        match self.signals.get(t) {
            Some(Signal::Buy) => Ok(self.full_index),
            Some(Signal::Sell) => Ok(0),
            Some(Signal::Hold) => Ok(position),
            None => Err(format!("no signal for second {t}")),
        }
    }
}

/// MACD rule on mid prices: buy when MACD and DIF both exceed `threshold`, sell when both
/// are below `-threshold`, hold otherwise.
pub fn macd_strategy(series: &MarketSeries, spans: MacdSpans, threshold: f64, grid: ActionGrid) -> Result<SignalPolicy, BacktestError> {
    if threshold < 0.0 {
        return Err(BacktestError::Params("threshold must be non-negative".into()));
    }
    let m = macd(&series.mids(), spans)?;
    let signals = m
        .macd
        .iter()
        .zip(&m.dif)
        .map(|(&h, &d)| {
            if h > threshold && d > threshold {
                Signal::Buy
            } else if h < -threshold && d < -threshold {
                Signal::Sell
            } else {
                Signal::Hold
            }
        })
        .collect();
    Ok(SignalPolicy {
        signals,
        full_index: grid.n_actions - 1,
    })
}

/// Imbalance rule: below `lower` (bid-heavy book) buys to full, above `upper` goes flat.
pub fn iv_strategy(series: &MarketSeries, levels: usize, upper: f64, lower: f64, grid: ActionGrid) -> Result<SignalPolicy, BacktestError> {
    if !(-1.0..=1.0).contains(&lower) || !(-1.0..=1.0).contains(&upper) || lower >= upper {
        return Err(BacktestError::Params(format!("need -1 <= lower < upper <= 1, got ({lower}, {upper})")));
    }
    let signals = series
        .lobs
        .iter()
        .map(|lob| {
            let v = imbalance(lob, levels.min(lob.depth()))?;
            Ok(if v < lower {
                Signal::Buy
            } else if v > upper {
                Signal::Sell
            } else {
                Signal::Hold
            })
        })
        .collect::<Result<_, DataError>>()?;
    Ok(SignalPolicy {
        signals,
        full_index: grid.n_actions - 1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquityCurve {
    pub timestamps: Vec<i64>,
    pub values: Vec<f64>,
    pub positions: Vec<f64>,
}

impl EquityCurve {
    pub fn from_values(values: Vec<f64>) -> Self {
        Self {
            timestamps: (0..values.len() as i64).collect(),
            positions: vec![0.0; values.len()],
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `V_t / V_{t-1} - 1` from the second point on.
    pub fn returns(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
    }

    pub fn write_csv(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "ts,net_value")?;
        for (t, v) in self.timestamps.iter().zip(&self.values) {
            writeln!(w, "{t},{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tr: f64,
    pub avol: f64,
    pub mdd: f64,
    pub asr: f64,
    pub acr: f64,
    pub asor: f64,
    /// Return volatility was zero; `asr` reported as 0.
    pub asr_undefined: bool,
    /// Drawdown was zero; `acr` reported as 0.
    pub acr_undefined: bool,
    /// No spread among negative returns; `asor` reported as 0.
    pub asor_undefined: bool,
    pub trade_count: usize,
    /// Mean length in seconds of uninterrupted non-zero holdings.
    pub ahl: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt())
}

/// Largest peak-to-trough loss relative to the peak.
pub fn max_drawdown(values: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut mdd: f64 = 0.0;
    for &v in values {
        peak = peak.max(v);
        mdd = mdd.max((peak - v) / peak);
    }
    mdd
}

/// Total return, annualized volatility, max drawdown and annualized Sharpe, Calmar and
/// Sortino ratios of a per-second equity curve. Standard deviations are population ones.
pub fn compute_metrics(curve: &EquityCurve) -> Result<MetricsReport, BacktestError> {
    if curve.len() < 2 || !(curve.values[0] > 0.0) {
        return Err(BacktestError::Curve(format!("{} points", curve.len())));
    }
    let v = &curve.values;
    let rets = curve.returns();
    let (mean, sd) = mean_std(&rets);
    let negatives: Vec<f64> = rets.iter().copied().filter(|&r| r < 0.0).collect();
    let (_, dd) = mean_std(&negatives);
    let mdd = max_drawdown(v);
    let root_m = SECONDS_PER_YEAR.sqrt();
    let positions: Vec<usize> = curve.positions.iter().map(|&p| usize::from(p > 0.0)).collect();
    let trade_count = curve.positions.windows(2).filter(|w| w[0] != w[1]).count();
    Ok(MetricsReport {
        tr: (v[v.len() - 1] - v[0]) / v[0],
        avol: sd * root_m,
        mdd,
        asr: if sd > 0.0 { mean / sd * root_m } else { 0.0 },
        acr: if mdd > 0.0 { mean / mdd * SECONDS_PER_YEAR } else { 0.0 },
        asor: if dd > 0.0 { mean * root_m / dd } else { 0.0 },
        asr_undefined: sd == 0.0,
        acr_undefined: mdd == 0.0,
        asor_undefined: dd == 0.0,
        trade_count,
        ahl: average_holding_length(&positions),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestResult {
    pub curve: EquityCurve,
    pub trades: Vec<TradeRecord>,
    /// Final value if the position were sold into the book instead of marked at the bid.
    pub liquidation_value: f64,
    pub clip_count: usize,
}

/// Cash that exactly buys the full grid position at the first best ask.
pub fn default_initial_cash(series: &MarketSeries, grid: ActionGrid) -> f64 {
    grid.max_position * series.lobs[0].best_ask()
}

/// Steps `policy` over the whole series starting flat.
pub fn run_backtest(
    policy: &mut dyn LowLevelPolicy,
    series: &MarketSeries,
    fee_rate: f64,
    grid: ActionGrid,
    initial_cash: f64,
) -> Result<BacktestResult, BacktestError> {
    let mut env = LowLevelEnv::new(series, grid, fee_rate, 0, series.len(), 0, initial_cash)?.record_trades();
    let n = series.len();
    let mut curve = EquityCurve {
        timestamps: Vec::with_capacity(n),
        values: Vec::with_capacity(n),
        positions: Vec::with_capacity(n),
    };
    curve.timestamps.push(env.lob().timestamp);
    curve.values.push(env.net_value());
    curve.positions.push(env.account().position);
    while !env.done() {
        let obs = env.observation();
        let action = policy.act(obs.t, obs.position_index).map_err(|message| BacktestError::Policy {
            cursor: obs.t,
            message,
        })?;
        env.step(action)?;
        curve.timestamps.push(env.lob().timestamp);
        curve.values.push(env.net_value());
        curve.positions.push(env.account().position);
    }
    Ok(BacktestResult {
        curve,
        liquidation_value: env.liquidation_value(),
        clip_count: env.clip_count(),
        trades: env.take_trades(),
    })
}

/// Runs the greedy router over the whole series starting flat.
pub fn run_router_backtest(router: &RouterNet, env: HighLevelEnv<'_>) -> Result<(BacktestResult, Vec<HighStep>), BacktestError> {
    let mut env = env.record_curve();
    let mut steps = Vec::new();
    while !env.done() {
        let label = router.choose(&env.state());
        steps.push(env.step(label)?);
    }
    let points = env.curve();
    let curve = EquityCurve {
        timestamps: points.iter().map(|p| p.ts).collect(),
        values: points.iter().map(|p| p.net_value).collect(),
        positions: points.iter().map(|p| p.position).collect(),
    };
    Ok((
        BacktestResult {
            curve,
            liquidation_value: env.low().liquidation_value(),
            clip_count: env.low().clip_count(),
            trades: env.trades().to_vec(),
        },
        steps,
    ))
}
