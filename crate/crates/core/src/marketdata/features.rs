//! Versioned feature registry.
//!
//! A schema is an ordered list of named entries, each bound to a formula and its
//! parameters. The low-level schema runs on a 60-second window of (LOB, second bar)
//! pairs; the high-level schema on 60 minute bars. Each formula declares whether it is
//! unchanged when every price is shifted by a constant and/or scaled by a positive factor.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::indicators::{ema, imbalance_of, macd, MacdSpans};
use super::{DataError, LobSnapshot, MarketSeries, OhlcBar};

pub const WINDOW: usize = 60;
pub const LOW_SCHEMA_ID: &str = "low-v1";
pub const HIGH_SCHEMA_ID: &str = "high-v1";
pub const LOW_DIM: usize = 54;
pub const HIGH_DIM: usize = 19;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "formula_id", content = "params", rename_all = "snake_case")]
pub enum Formula {
    /// Cumulative book imbalance over the first `levels` levels.
    Imbalance { levels: usize },
    RelSpread,
    /// Simple return of the reference price over `lag` steps.
    Return { lag: usize },
    /// Population std of the last `window` one-step returns.
    Volatility { window: usize },
    BidDepthShare { level: usize },
    AskDepthShare { level: usize },
    MacdDif,
    MacdDea,
    MacdHist,
    EmaRatio { fast: usize, slow: usize },
    RangeRatio { window: usize },
    CloseInRange { window: usize },
    DepthSkew,
    BarReturn { lag: usize },
    MeanImbalance { levels: usize },
    ImbalanceChange { levels: usize },
    MeanRelSpread,
    DepthLogRatio,
    PriceEmaGap { span: usize },
    BodyRatio,
    UpperShadow,
    LowerShadow,
    Parkinson { window: usize },
    UpFraction { window: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Invariance {
    /// Unchanged when every price gets `+ c`.
    pub shift: bool,
    /// Unchanged when every price gets `* c`, `c > 0`.
    pub scale: bool,
}

impl Formula {
    pub fn needs_book(&self) -> bool {
        matches!(
            self,
            Formula::Imbalance { .. }
                | Formula::RelSpread
                | Formula::BidDepthShare { .. }
                | Formula::AskDepthShare { .. }
                | Formula::DepthSkew
                | Formula::MeanImbalance { .. }
                | Formula::ImbalanceChange { .. }
                | Formula::MeanRelSpread
                | Formula::DepthLogRatio
        )
    }

    pub fn invariance(&self) -> Invariance {
        use Formula::*;
        match self {
            Imbalance { .. } | BidDepthShare { .. } | AskDepthShare { .. } | MeanImbalance { .. }
            | ImbalanceChange { .. } | DepthLogRatio | CloseInRange { .. } | UpFraction { .. } => Invariance {
                shift: true,
                scale: true,
            },
            _ => Invariance {
                shift: false,
                scale: true,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub name: String,
    #[serde(flatten)]
    pub formula: Formula,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub schema_id: String,
    pub entries: Vec<FeatureEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub schema_id: String,
    pub values: Vec<f64>,
}

fn entry(name: impl Into<String>, formula: Formula) -> FeatureEntry {
    FeatureEntry {
        name: name.into(),
        formula,
    }
}

const RETURN_LAGS: [usize; 8] = [1, 2, 3, 5, 10, 15, 30, 59];
const VOL_WINDOWS: [usize; 3] = [10, 30, 59];
const RANGE_WINDOWS: [usize; 3] = [10, 30, 60];

impl FeatureSchema {
    /// Default 54-entry second-level schema.
    pub fn low_level() -> Self {
        use Formula::*;
        let mut e = Vec::with_capacity(LOW_DIM);
        for l in 1..=5 {
            e.push(entry(format!("imbalance_l{l}"), Imbalance { levels: l }));
        }
        e.push(entry("rel_spread", RelSpread));
        for lag in RETURN_LAGS {
            e.push(entry(format!("ret_lag{lag}"), Return { lag }));
        }
        for w in VOL_WINDOWS {
            e.push(entry(format!("vol_{w}"), Volatility { window: w }));
        }
        for l in 1..=5 {
            e.push(entry(format!("bid_share_l{l}"), BidDepthShare { level: l }));
        }
        for l in 1..=5 {
            e.push(entry(format!("ask_share_l{l}"), AskDepthShare { level: l }));
        }
        e.push(entry("macd_dif", MacdDif));
        e.push(entry("macd_dea", MacdDea));
        e.push(entry("macd_hist", MacdHist));
        e.push(entry("ema10_ema30", EmaRatio { fast: 10, slow: 30 }));
        for w in RANGE_WINDOWS {
            e.push(entry(format!("range_{w}"), RangeRatio { window: w }));
        }
        for w in RANGE_WINDOWS {
            e.push(entry(format!("close_in_range_{w}"), CloseInRange { window: w }));
        }
        e.push(entry("depth_skew", DepthSkew));
        for lag in [1, 5, 15] {
            e.push(entry(format!("bar_ret_lag{lag}"), BarReturn { lag }));
        }
        e.push(entry("mean_imbalance_l1", MeanImbalance { levels: 1 }));
        e.push(entry("mean_imbalance_l5", MeanImbalance { levels: 5 }));
        e.push(entry("imbalance_change_l1", ImbalanceChange { levels: 1 }));
        e.push(entry("mean_rel_spread", MeanRelSpread));
        e.push(entry("depth_log_ratio", DepthLogRatio));
        for span in [5, 20, 60] {
            e.push(entry(format!("ema_gap_{span}"), PriceEmaGap { span }));
        }
        e.push(entry("body", BodyRatio));
        e.push(entry("upper_shadow", UpperShadow));
        e.push(entry("lower_shadow", LowerShadow));
        e.push(entry("parkinson_60", Parkinson { window: 60 }));
        e.push(entry("up_fraction_59", UpFraction { window: 59 }));
        debug_assert_eq!(e.len(), LOW_DIM);
        Self {
            schema_id: LOW_SCHEMA_ID.into(),
            entries: e,
        }
    }

    /// Default 19-entry minute-level schema; bars only, the close is the reference price.
    pub fn high_level() -> Self {
        use Formula::*;
        let mut e = Vec::with_capacity(HIGH_DIM);
        for lag in RETURN_LAGS {
            e.push(entry(format!("ret_lag{lag}"), Return { lag }));
        }
        for w in VOL_WINDOWS {
            e.push(entry(format!("vol_{w}"), Volatility { window: w }));
        }
        e.push(entry("macd_dif", MacdDif));
        e.push(entry("macd_dea", MacdDea));
        e.push(entry("macd_hist", MacdHist));
        e.push(entry("ema10_ema30", EmaRatio { fast: 10, slow: 30 }));
        e.push(entry("range_60", RangeRatio { window: 60 }));
        e.push(entry("close_in_range_60", CloseInRange { window: 60 }));
        e.push(entry("up_fraction_59", UpFraction { window: 59 }));
        e.push(entry("parkinson_60", Parkinson { window: 60 }));
        debug_assert_eq!(e.len(), HIGH_DIM);
        Self {
            schema_id: HIGH_SCHEMA_ID.into(),
            entries: e,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn needs_book(&self) -> bool {
        self.entries.iter().any(|e| e.formula.needs_book())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    /// Evaluates every entry. Non-finite values are replaced by 0; the count of
    /// replacements is returned alongside the vector.
    pub fn compute(&self, window: &Window<'_>) -> Result<(FeatureVector, usize), DataError> {
        if window.bars.len() < WINDOW || window.lobs.as_ref().is_some_and(|l| l.len() < WINDOW) {
            return Err(DataError::InsufficientHistory {
                needed: WINDOW,
                got: window.bars.len(),
            });
        }
        if self.needs_book() && window.lobs.is_none() {
            return Err(DataError::BadParameter(format!(
                "schema {} needs order-book snapshots",
                self.schema_id
            )));
        }
        let ctx = Context::new(window);
        let mut nan = 0;
        let values = self
            .entries
            .iter()
            .map(|e| {
                let v = ctx.eval(&e.formula);
                if v.is_finite() {
                    v
                } else {
                    nan += 1;
                    0.0
                }
            })
            .collect();
        Ok((
            FeatureVector {
                schema_id: self.schema_id.clone(),
                values,
            },
            nan,
        ))
    }
}

/// The last 60 observations. Low-level windows carry snapshots; minute windows do not.
#[derive(Debug, Clone)]
pub struct Window<'a> {
    pub lobs: Option<Cow<'a, [LobSnapshot]>>,
    pub bars: Cow<'a, [OhlcBar]>,
}

impl<'a> Window<'a> {
    pub fn low(lobs: &'a [LobSnapshot], bars: &'a [OhlcBar]) -> Self {
        let n = lobs.len().min(bars.len());
        let take = n.min(WINDOW);
        Self {
            lobs: Some(Cow::Borrowed(&lobs[lobs.len() - take..])),
            bars: Cow::Borrowed(&bars[bars.len() - take..]),
        }
    }

    pub fn high(bars: &'a [OhlcBar]) -> Self {
        let take = bars.len().min(WINDOW);
        Self {
            lobs: None,
            bars: Cow::Borrowed(&bars[bars.len() - take..]),
        }
    }
}

pub fn low_level_features(lobs: &[LobSnapshot], bars: &[OhlcBar]) -> Result<(FeatureVector, usize), DataError> {
    if lobs.len() != bars.len() {
        return Err(DataError::LengthMismatch {
            lobs: lobs.len(),
            bars: bars.len(),
        });
    }
    FeatureSchema::low_level().compute(&Window::low(lobs, bars))
}

pub fn high_level_features(minute_bars: &[OhlcBar]) -> Result<(FeatureVector, usize), DataError> {
    FeatureSchema::high_level().compute(&Window::high(minute_bars))
}

struct Context<'w, 'a> {
    w: &'w Window<'a>,
    px: Vec<f64>,
    rets: Vec<f64>,
    macd: (f64, f64, f64),
}

impl<'w, 'a> Context<'w, 'a> {
    fn new(w: &'w Window<'a>) -> Self {
        let px: Vec<f64> = match &w.lobs {
            Some(l) => l.iter().map(LobSnapshot::mid).collect(),
            None => w.bars.iter().map(|b| b.close).collect(),
        };
        let rets = px.windows(2).map(|p| p[1] / p[0] - 1.0).collect();
        let m = macd(&px, MacdSpans::default()).expect("non-empty window");
        let last = px.len() - 1;
        Self {
            w,
            macd: (m.dif[last], m.dea[last], m.macd[last]),
            px,
            rets,
        }
    }

    fn last_px(&self) -> f64 {
        self.px[self.px.len() - 1]
    }

    fn lob(&self) -> &LobSnapshot {
        let l = self.w.lobs.as_ref().expect("book schema checked");
        &l[l.len() - 1]
    }

    fn lobs(&self) -> &[LobSnapshot] {
        self.w.lobs.as_ref().expect("book schema checked")
    }

    fn bars(&self, window: usize) -> &[OhlcBar] {
        let b = &self.w.bars;
        &b[b.len() - window.min(b.len())..]
    }

    fn book_imbalance(lob: &LobSnapshot, levels: usize) -> f64 {
        let k = levels.min(lob.depth());
        imbalance_of(
            lob.asks[..k].iter().map(|l| l.qty),
            lob.bids[..k].iter().map(|l| l.qty),
        )
        .unwrap_or(f64::NAN)
    }

    fn eval(&self, f: &Formula) -> f64 {
        use Formula::*;
        let n = self.px.len();
        match *f {
            Imbalance { levels } => Self::book_imbalance(self.lob(), levels),
            RelSpread => self.lob().spread() / self.lob().mid(),
            Return { lag } => {
                let lag = lag.min(n - 1);
                self.px[n - 1] / self.px[n - 1 - lag] - 1.0
            }
            Volatility { window } => {
                let r = &self.rets[self.rets.len() - window.min(self.rets.len())..];
                population_std(r)
            }
            BidDepthShare { level } => {
                let lob = self.lob();
                let total: f64 = lob.bids.iter().map(|l| l.qty).sum();
                lob.bids.get(level - 1).map_or(0.0, |l| l.qty / total)
            }
            AskDepthShare { level } => {
                let lob = self.lob();
                let total: f64 = lob.asks.iter().map(|l| l.qty).sum();
                lob.asks.get(level - 1).map_or(0.0, |l| l.qty / total)
            }
            MacdDif => self.macd.0 / self.last_px(),
            MacdDea => self.macd.1 / self.last_px(),
            MacdHist => self.macd.2 / self.last_px(),
            EmaRatio { fast, slow } => last(&ema(&self.px, fast)) / last(&ema(&self.px, slow)) - 1.0,
            RangeRatio { window } => {
                let (h, l) = high_low(self.bars(window));
                (h - l) / self.last_px()
            }
            CloseInRange { window } => {
                let bars = self.bars(window);
                let (h, l) = high_low(bars);
                if h > l {
                    (bars[bars.len() - 1].close - l) / (h - l)
                } else {
                    0.5
                }
            }
            DepthSkew => {
                let lob = self.lob();
                let mid = lob.mid();
                let ask: f64 = lob.asks.iter().map(|l| l.qty * (l.price - mid)).sum();
                let bid: f64 = lob.bids.iter().map(|l| l.qty * (mid - l.price)).sum();
                let qty: f64 = lob.asks.iter().chain(&lob.bids).map(|l| l.qty).sum();
                (ask - bid) / (qty * mid)
            }
            BarReturn { lag } => {
                let b = &self.w.bars;
                let lag = lag.min(b.len() - 1);
                b[b.len() - 1].close / b[b.len() - 1 - lag].close - 1.0
            }
            MeanImbalance { levels } => {
                let l = self.lobs();
                l.iter().map(|s| Self::book_imbalance(s, levels)).sum::<f64>() / l.len() as f64
            }
            ImbalanceChange { levels } => {
                let l = self.lobs();
                Self::book_imbalance(&l[l.len() - 1], levels) - Self::book_imbalance(&l[0], levels)
            }
            MeanRelSpread => {
                let l = self.lobs();
                l.iter().map(|s| s.spread() / s.mid()).sum::<f64>() / l.len() as f64
            }
            DepthLogRatio => {
                let lob = self.lob();
                let b: f64 = lob.bids.iter().map(|l| l.qty).sum();
                let a: f64 = lob.asks.iter().map(|l| l.qty).sum();
                (b / a).ln()
            }
            PriceEmaGap { span } => self.last_px() / last(&ema(&self.px, span)) - 1.0,
            BodyRatio => {
                let b = self.bars(1)[0];
                (b.close - b.open) / self.last_px()
            }
            UpperShadow => {
                let b = self.bars(1)[0];
                (b.high - b.open.max(b.close)) / self.last_px()
            }
            LowerShadow => {
                let b = self.bars(1)[0];
                (b.open.min(b.close) - b.low) / self.last_px()
            }
            Parkinson { window } => {
                let bars = self.bars(window);
                let s: f64 = bars.iter().map(|b| (b.high / b.low).ln().powi(2)).sum();
                (s / (bars.len() as f64 * 4.0 * std::f64::consts::LN_2)).sqrt()
            }
            UpFraction { window } => {
                let r = &self.rets[self.rets.len() - window.min(self.rets.len())..];
                r.iter().filter(|&&x| x > 0.0).count() as f64 / r.len().max(1) as f64
            }
        }
    }
}

fn last(v: &[f64]) -> f64 {
    v[v.len() - 1]
}

fn high_low(bars: &[OhlcBar]) -> (f64, f64) {
    bars.iter().fold((f64::NEG_INFINITY, f64::INFINITY), |(h, l), b| (h.max(b.high), l.min(b.low)))
}

pub(crate) fn population_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Row-major feature table, one row per time index of a series.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub schema_id: String,
    pub dim: usize,
    pub data: Vec<f64>,
    /// Non-finite values replaced by 0 while building.
    pub nan_count: usize,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn from_rows(schema_id: impl Into<String>, dim: usize, rows: &[Vec<f64>]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            assert_eq!(r.len(), dim);
            data.extend_from_slice(r);
        }
        Self {
            schema_id: schema_id.into(),
            dim,
            data,
            nan_count: 0,
        }
    }

    /// Low-level features for every second of `series`. The first 59 rows use a window
    /// padded at the front with copies of the first observation.
    pub fn low_level(series: &MarketSeries) -> Self {
        let schema = FeatureSchema::low_level();
        let n = series.len();
        let mut data = Vec::with_capacity(n * schema.len());
        let mut nan_count = 0;
        for t in 0..n {
            let window = if t + 1 >= WINDOW {
                Window::low(&series.lobs[t + 1 - WINDOW..=t], &series.second_bars[t + 1 - WINDOW..=t])
            } else {
                let pad = WINDOW - (t + 1);
                let lobs: Vec<_> = std::iter::repeat_n(series.lobs[0].clone(), pad)
                    .chain(series.lobs[..=t].iter().cloned())
                    .collect();
                let bars: Vec<_> = std::iter::repeat_n(series.second_bars[0], pad)
                    .chain(series.second_bars[..=t].iter().copied())
                    .collect();
                Window {
                    lobs: Some(Cow::Owned(lobs)),
                    bars: Cow::Owned(bars),
                }
            };
            let (fv, nan) = schema.compute(&window).expect("window has 60 rows");
            nan_count += nan;
            data.extend_from_slice(&fv.values);
        }
        Self {
            schema_id: schema.schema_id,
            dim: schema.entries.len(),
            data,
            nan_count,
        }
    }

    /// High-level features, one row per minute bar `k`, computed from bars `..=k`
    /// (front-padded like [`FeatureMatrix::low_level`]).
    pub fn high_level(minute_bars: &[OhlcBar]) -> Self {
        let schema = FeatureSchema::high_level();
        let mut data = Vec::with_capacity(minute_bars.len() * schema.len());
        let mut nan_count = 0;
        for k in 0..minute_bars.len() {
            let window = if k + 1 >= WINDOW {
                Window::high(&minute_bars[k + 1 - WINDOW..=k])
            } else {
                let bars: Vec<_> = std::iter::repeat_n(minute_bars[0], WINDOW - (k + 1))
                    .chain(minute_bars[..=k].iter().copied())
                    .collect();
                Window {
                    lobs: None,
                    bars: Cow::Owned(bars),
                }
            };
            let (fv, nan) = schema.compute(&window).expect("window has 60 rows");
            nan_count += nan;
            data.extend_from_slice(&fv.values);
        }
        Self {
            schema_id: schema.schema_id,
            dim: schema.entries.len(),
            data,
            nan_count,
        }
    }
}
