use serde::{Deserialize, Serialize};

use super::DataError;

/// Default number of book levels kept per side.
pub const DEFAULT_DEPTH: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub price: f64,
    pub qty: f64,
}

impl Level {
    pub const fn new(price: f64, qty: f64) -> Self {
        Self { price, qty }
    }
}

/// One second of limit-order-book state. Bids and asks are best-first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LobSnapshot {
    pub timestamp: i64,
    pub bids: Vec<Level>,
    pub asks: Vec<Level>,
}

impl LobSnapshot {
    /// Builds a snapshot and checks ordering, positive quantities and a strictly positive spread.
    pub fn new(timestamp: i64, bids: Vec<Level>, asks: Vec<Level>) -> Result<Self, DataError> {
        let lob = Self {
            timestamp,
            bids,
            asks,
        };
        lob.validate(DEFAULT_DEPTH.max(lob.bids.len()).max(lob.asks.len()), false)?;
        Ok(lob)
    }

    /// Like [`LobSnapshot::new`] but accepts a locked book (best ask == best bid).
    ///
    /// Zero-spread books only come out of the synthetic generator and hand-built
    /// test fixtures; ingestion always uses the strict check.
    pub fn new_locked(timestamp: i64, bids: Vec<Level>, asks: Vec<Level>) -> Result<Self, DataError> {
        let lob = Self {
            timestamp,
            bids,
            asks,
        };
        lob.validate(DEFAULT_DEPTH.max(lob.bids.len()).max(lob.asks.len()), true)?;
        Ok(lob)
    }

    pub fn validate(&self, max_depth: usize, allow_locked: bool) -> Result<(), DataError> {
        let ts = self.timestamp;
        let bad = |reason: String| DataError::InvalidBook { timestamp: ts, reason };
        if self.bids.is_empty() || self.asks.is_empty() {
            return Err(bad("each side needs at least one level".into()));
        }
        if self.bids.len() > max_depth || self.asks.len() > max_depth {
            return Err(bad(format!("more than {max_depth} levels")));
        }
        for l in self.bids.iter().chain(&self.asks) {
            if !(l.price.is_finite() && l.price > 0.0) {
                return Err(bad(format!("non-positive price {}", l.price)));
            }
            if !(l.qty.is_finite() && l.qty > 0.0) {
                return Err(bad(format!("non-positive quantity {}", l.qty)));
            }
        }
        if self.bids.windows(2).any(|w| w[1].price >= w[0].price) {
            return Err(bad("bid prices not strictly decreasing".into()));
        }
        if self.asks.windows(2).any(|w| w[1].price <= w[0].price) {
            return Err(bad("ask prices not strictly increasing".into()));
        }
        let (bid, ask) = (self.best_bid(), self.best_ask());
        if ask < bid || (!allow_locked && ask == bid) {
            return Err(DataError::CrossedBook { timestamp: ts, bid, ask });
        }
        Ok(())
    }

    pub fn best_bid(&self) -> f64 {
        self.bids[0].price
    }

    pub fn best_ask(&self) -> f64 {
        self.asks[0].price
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.best_bid() + self.best_ask())
    }

    pub fn spread(&self) -> f64 {
        self.best_ask() - self.best_bid()
    }

    pub fn depth(&self) -> usize {
        self.bids.len().min(self.asks.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OhlcBar {
    pub timestamp: i64,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
}

impl OhlcBar {
    pub fn new(timestamp: i64, open: f64, high: f64, low: f64, close: f64) -> Result<Self, DataError> {
        let bar = Self {
            timestamp,
            open,
            high,
            low,
            close,
        };
        bar.validate()?;
        Ok(bar)
    }

    pub fn flat(timestamp: i64, price: f64) -> Self {
        Self {
            timestamp,
            open: price,
            high: price,
            low: price,
            close: price,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let ok = [self.open, self.high, self.low, self.close]
            .iter()
            .all(|p| p.is_finite())
            && self.low <= self.high
            && (self.low..=self.high).contains(&self.open)
            && (self.low..=self.high).contains(&self.close);
        if ok {
            Ok(())
        } else {
            Err(DataError::InvalidBar {
                timestamp: self.timestamp,
            })
        }
    }

    /// Merges consecutive bars: first open, max high, min low, last close.
    pub fn aggregate(bars: &[OhlcBar], timestamp: i64) -> Option<OhlcBar> {
        let first = bars.first()?;
        let last = bars.last()?;
        let (high, low) = bars.iter().fold((f64::NEG_INFINITY, f64::INFINITY), |(h, l), b| {
            (h.max(b.high), l.min(b.low))
        });
        Some(OhlcBar {
            timestamp,
            open: first.open,
            high,
            low,
            close: last.close,
        })
    }
}

/// Buckets second bars into minute bars aligned to 60-second boundaries.
///
/// A bucket is labelled with its boundary timestamp. Partial leading or trailing
/// minutes are kept.
pub fn aggregate_minutes(second_bars: &[OhlcBar]) -> Vec<OhlcBar> {
    let mut out = Vec::with_capacity(second_bars.len() / 60 + 2);
    let mut start = 0;
    while start < second_bars.len() {
        let bucket = second_bars[start].timestamp.div_euclid(60);
        let mut end = start + 1;
        while end < second_bars.len() && second_bars[end].timestamp.div_euclid(60) == bucket {
            end += 1;
        }
        out.push(OhlcBar::aggregate(&second_bars[start..end], bucket * 60).expect("non-empty bucket"));
        start = end;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub symbol: String,
    pub start_ts: i64,
    pub end_ts: i64,
}

/// Second-level LOB snapshots with their OHLC bars, plus derived minute bars.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSeries {
    pub meta: SeriesMeta,
    pub lobs: Vec<LobSnapshot>,
    pub second_bars: Vec<OhlcBar>,
    pub minute_bars: Vec<OhlcBar>,
}

impl MarketSeries {
    /// Assembles a series, checking alignment and the one-second stride, and derives minute bars.
    pub fn new(symbol: impl Into<String>, lobs: Vec<LobSnapshot>, second_bars: Vec<OhlcBar>) -> Result<Self, DataError> {
        if lobs.is_empty() {
            return Err(DataError::Empty);
        }
        if lobs.len() != second_bars.len() {
            return Err(DataError::LengthMismatch {
                lobs: lobs.len(),
                bars: second_bars.len(),
            });
        }
        for (i, (lob, bar)) in lobs.iter().zip(&second_bars).enumerate() {
            if lob.timestamp != bar.timestamp {
                return Err(DataError::Misaligned { index: i });
            }
            if i > 0 && lob.timestamp != lobs[i - 1].timestamp + 1 {
                return Err(DataError::Stride { index: i });
            }
        }
        let minute_bars = aggregate_minutes(&second_bars);
        let meta = SeriesMeta {
            symbol: symbol.into(),
            start_ts: lobs[0].timestamp,
            end_ts: lobs[lobs.len() - 1].timestamp,
        };
        Ok(Self {
            meta,
            lobs,
            second_bars,
            minute_bars,
        })
    }

    pub fn len(&self) -> usize {
        self.lobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lobs.is_empty()
    }

    pub fn mids(&self) -> Vec<f64> {
        self.lobs.iter().map(LobSnapshot::mid).collect()
    }

    /// Copies out `[start, end)` as a standalone series.
    pub fn slice(&self, start: usize, end: usize) -> Result<MarketSeries, DataError> {
        if start >= end || end > self.len() {
            return Err(DataError::BadRange {
                start,
                end,
                len: self.len(),
            });
        }
        MarketSeries::new(
            self.meta.symbol.clone(),
            self.lobs[start..end].to_vec(),
            self.second_bars[start..end].to_vec(),
        )
    }

    /// Index of the second whose timestamp is `ts`.
    pub fn index_of(&self, ts: i64) -> Option<usize> {
        let off = ts - self.meta.start_ts;
        (off >= 0 && (off as usize) < self.len()).then_some(off as usize)
    }

    /// Minute bars whose bucket closed strictly before second index `t` starts.
    pub fn completed_minutes_before(&self, t: usize) -> usize {
        let ts = self.lobs[t.min(self.len() - 1)].timestamp;
        self.minute_bars
            .partition_point(|b| b.timestamp + 60 <= ts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bar(ts: i64, o: f64, h: f64, l: f64, c: f64) -> OhlcBar {
        OhlcBar::new(ts, o, h, l, c).unwrap()
    }

    #[test]
    fn rejects_crossed_and_unordered_books() {
        let crossed = LobSnapshot::new(0, vec![Level::new(101.0, 1.0)], vec![Level::new(100.0, 1.0)]);
        assert!(matches!(crossed, Err(DataError::CrossedBook { .. })));
        let locked = LobSnapshot::new(0, vec![Level::new(100.0, 1.0)], vec![Level::new(100.0, 1.0)]);
        assert!(matches!(locked, Err(DataError::CrossedBook { .. })));
        assert!(LobSnapshot::new_locked(0, vec![Level::new(100.0, 1.0)], vec![Level::new(100.0, 1.0)]).is_ok());
        let unordered = LobSnapshot::new(
            0,
            vec![Level::new(99.0, 1.0), Level::new(99.5, 1.0)],
            vec![Level::new(100.0, 1.0)],
        );
        assert!(unordered.is_err());
        let zero_qty = LobSnapshot::new(0, vec![Level::new(99.0, 0.0)], vec![Level::new(100.0, 1.0)]);
        assert!(zero_qty.is_err());
    }

    #[test]
    fn bar_invariants() {
        assert!(OhlcBar::new(0, 1.0, 2.0, 0.5, 1.5).is_ok());
        assert!(OhlcBar::new(0, 3.0, 2.0, 0.5, 1.5).is_err());
        assert!(OhlcBar::new(0, 1.0, 2.0, 0.5, 0.4).is_err());
    }

    #[test]
    fn minute_buckets_follow_boundaries() {
        let bars: Vec<_> = (0..120).map(|t| bar(t, t as f64, t as f64 + 1.0, t as f64 - 1.0, t as f64)).collect();
        let m = aggregate_minutes(&bars);
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].timestamp, 0);
        assert_eq!(m[0].open, 0.0);
        assert_eq!(m[0].high, 60.0);
        assert_eq!(m[0].low, -1.0);
        assert_eq!(m[0].close, 59.0);
        assert_eq!(m[1].timestamp, 60);
        assert_eq!(m[1].high, 120.0);
    }

    #[test]
    fn partial_minutes_kept() {
        let bars: Vec<_> = (30..100).map(|t| OhlcBar::flat(t, 1.0)).collect();
        let m = aggregate_minutes(&bars);
        assert_eq!(m.iter().map(|b| b.timestamp).collect::<Vec<_>>(), vec![0, 60]);
    }
}
