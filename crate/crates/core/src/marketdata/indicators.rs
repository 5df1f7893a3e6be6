//! Technical indicators used both as features and by the rule-based baselines.

use serde::{Deserialize, Serialize};

use super::{DataError, LobSnapshot};

/// Exponential moving average with smoothing `2 / (span + 1)`, seeded with the first value.
pub fn ema(values: &[f64], span: usize) -> Vec<f64> {
    let k = 2.0 / (span as f64 + 1.0);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = match values.first() {
        Some(&v) => v,
        None => return out,
    };
    for &v in values {
        acc += k * (v - acc);
        out.push(acc);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacdSpans {
    pub short: usize,
    pub mid: usize,
    pub long: usize,
}

impl Default for MacdSpans {
    fn default() -> Self {
        Self {
            short: 9,
            mid: 12,
            long: 26,
        }
    }
}

impl MacdSpans {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.short == 0 || !(self.short < self.mid && self.mid < self.long) {
            return Err(DataError::BadParameter(format!(
                "MACD spans must satisfy 0 < short < mid < long, got {:?}",
                self
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Macd {
    pub dif: Vec<f64>,
    pub dea: Vec<f64>,
    pub macd: Vec<f64>,
}

/// DIF = EMA(mid) - EMA(long), DEA = EMA(DIF, short), MACD = DIF - DEA.
pub fn macd(prices: &[f64], spans: MacdSpans) -> Result<Macd, DataError> {
    spans.validate()?;
    if prices.is_empty() {
        return Err(DataError::Empty);
    }
    let fast = ema(prices, spans.mid);
    let slow = ema(prices, spans.long);
    let dif: Vec<f64> = fast.iter().zip(&slow).map(|(a, b)| a - b).collect();
    let dea = ema(&dif, spans.short);
    let macd = dif.iter().zip(&dea).map(|(a, b)| a - b).collect();
    Ok(Macd { dif, dea, macd })
}

/// Order-book imbalance over the first `levels` levels:
/// `sum(ask_size - bid_size) / sum(ask_size + bid_size)`.
pub fn imbalance(lob: &LobSnapshot, levels: usize) -> Result<f64, DataError> {
    if levels == 0 || levels > lob.bids.len() || levels > lob.asks.len() {
        return Err(DataError::BadParameter(format!(
            "imbalance over {levels} levels but book has {} bid / {} ask levels",
            lob.bids.len(),
            lob.asks.len()
        )));
    }
    imbalance_of(
        lob.asks[..levels].iter().map(|l| l.qty),
        lob.bids[..levels].iter().map(|l| l.qty),
    )
}

pub(crate) fn imbalance_of(
    asks: impl Iterator<Item = f64>,
    bids: impl Iterator<Item = f64>,
) -> Result<f64, DataError> {
    let (mut diff, mut total) = (0.0, 0.0);
    for (a, b) in asks.zip(bids) {
        diff += a - b;
        total += a + b;
    }
    if total == 0.0 {
        return Err(DataError::EmptyBookWindow);
    }
    Ok(diff / total)
}
