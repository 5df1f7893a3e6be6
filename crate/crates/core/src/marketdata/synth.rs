//! Deterministic synthetic markets built from a list of trend regimes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataError, Level, LobSnapshot, MarketSeries, OhlcBar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegimeKind {
    Bull,
    Rally,
    Sideways,
    Pullback,
    Bear,
}

/// Drift unit of the regime presets: 1e-5 log-return per second, about 0.06% a minute.
pub const DRIFT_UNIT: f64 = 1e-5;
/// Per-second volatility of the regime presets.
pub const PRESET_VOLATILITY: f64 = 2e-5;

impl RegimeKind {
    /// Preset drift: bull +2, rally +1, sideways 0, pullback -1, bear -2 drift units.
    pub fn preset_drift(self) -> f64 {
        DRIFT_UNIT
            * match self {
                Self::Bull => 2.0,
                Self::Rally => 1.0,
                Self::Sideways => 0.0,
                Self::Pullback => -1.0,
                Self::Bear => -2.0,
            }
    }
}

impl std::str::FromStr for RegimeKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bull" => Ok(Self::Bull),
            "rally" => Ok(Self::Rally),
            "sideways" => Ok(Self::Sideways),
            "pullback" => Ok(Self::Pullback),
            "bear" => Ok(Self::Bear),
            other => Err(DataError::BadParameter(format!("unknown regime kind {other:?}"))),
        }
    }
}

/// One stretch of the synthetic path. `drift` and `volatility` are per-second log-return
/// mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub kind: RegimeKind,
    pub length_seconds: usize,
    pub drift: f64,
    pub volatility: f64,
}

impl Regime {
    pub fn new(kind: RegimeKind, length_seconds: usize, drift: f64, volatility: f64) -> Self {
        Self {
            kind,
            length_seconds,
            drift,
            volatility,
        }
    }

    /// Regime with the preset drift of `kind` and [`PRESET_VOLATILITY`].
    pub fn preset(kind: RegimeKind, length_seconds: usize) -> Self {
        Self::new(kind, length_seconds, kind.preset_drift(), PRESET_VOLATILITY)
    }
}

/// Order of the five-regime suite. Adjacent regimes alternate direction so that every
/// boundary is a turning point of the price path.
pub const FIVE_REGIME_ORDER: [RegimeKind; 5] = [
    RegimeKind::Rally,
    RegimeKind::Bear,
    RegimeKind::Bull,
    RegimeKind::Pullback,
    RegimeKind::Sideways,
];

/// The five preset regimes in [`FIVE_REGIME_ORDER`], `seconds_each` long.
pub fn five_regime_suite(seed: u64, seconds_each: usize) -> SynthSpec {
    SynthSpec::new(
        seed,
        FIVE_REGIME_ORDER.iter().map(|&k| Regime::preset(k, seconds_each)).collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub regimes: Vec<Regime>,
    pub spread_ticks: u32,
    /// Quantity at each book level, best first; its length is the book depth.
    pub depth_profile: Vec<f64>,
    #[serde(default = "default_tick")]
    pub tick_size: f64,
    #[serde(default = "default_mid")]
    pub initial_mid: f64,
    #[serde(default = "default_start")]
    pub start_ts: i64,
    #[serde(default = "default_symbol")]
    pub symbol: String,
}

fn default_tick() -> f64 {
    0.01
}
fn default_mid() -> f64 {
    100.0
}
fn default_start() -> i64 {
    1_699_999_980
}
fn default_symbol() -> String {
    "SYNTH".into()
}

impl SynthSpec {
    pub fn new(seed: u64, regimes: Vec<Regime>) -> Self {
        Self {
            seed,
            regimes,
            spread_ticks: 1,
            depth_profile: vec![5.0, 4.0, 3.0, 2.0, 1.0],
            tick_size: default_tick(),
            initial_mid: default_mid(),
            start_ts: default_start(),
            symbol: default_symbol(),
        }
    }

    pub fn with_spread_ticks(mut self, ticks: u32) -> Self {
        self.spread_ticks = ticks;
        self
    }

    pub fn with_depth(mut self, depth: Vec<f64>) -> Self {
        self.depth_profile = depth;
        self
    }

    pub fn with_initial_mid(mut self, mid: f64) -> Self {
        self.initial_mid = mid;
        self
    }
}

/// Builds a book symmetric around `mid`: best levels sit half a spread away,
/// deeper levels one tick further each.
pub fn symmetric_book(ts: i64, mid: f64, spread: f64, tick: f64, depth: &[f64]) -> Result<LobSnapshot, DataError> {
    let half = 0.5 * spread;
    let bids = depth
        .iter()
        .enumerate()
        .map(|(i, &q)| Level::new(mid - half - i as f64 * tick, q))
        .collect();
    let asks = depth
        .iter()
        .enumerate()
        .map(|(i, &q)| Level::new(mid + half + i as f64 * tick, q))
        .collect();
    if spread > 0.0 {
        LobSnapshot::new(ts, bids, asks)
    } else {
        LobSnapshot::new_locked(ts, bids, asks)
    }
}

/// Generates a seeded geometric random walk, one regime after another, and wraps every
/// second in a symmetric book. Pure function of `spec`.
pub fn synth_market(spec: &SynthSpec) -> Result<MarketSeries, DataError> {
    if spec.regimes.is_empty() {
        return Err(DataError::BadParameter("at least one regime required".into()));
    }
    if spec.depth_profile.is_empty() || spec.depth_profile.iter().any(|&q| !(q > 0.0)) {
        return Err(DataError::BadParameter("depth profile must be non-empty and positive".into()));
    }
    if !(spec.tick_size > 0.0 && spec.initial_mid > 0.0) {
        return Err(DataError::BadParameter("tick size and initial mid must be positive".into()));
    }
    for r in &spec.regimes {
        if r.length_seconds == 0 {
            return Err(DataError::BadParameter("regime length must be > 0".into()));
        }
        if !(r.volatility >= 0.0) || !r.drift.is_finite() {
            return Err(DataError::BadParameter("volatility must be >= 0 and drift finite".into()));
        }
    }
    let total: usize = spec.regimes.iter().map(|r| r.length_seconds).sum();
    let spread = spec.spread_ticks as f64 * spec.tick_size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut lobs = Vec::with_capacity(total);
    let mut bars = Vec::with_capacity(total);
    let mut mid = spec.initial_mid;
    let mut ts = spec.start_ts;
    let mut first = true;
    for regime in &spec.regimes {
        for _ in 0..regime.length_seconds {
            let open = mid;
            if !first {
                let z: f64 = StandardNormal.sample(&mut rng);
                mid *= (regime.drift + regime.volatility * z).exp();
            }
            first = false;
            // keep the best bid strictly positive
            if mid - 0.5 * spread - spec.depth_profile.len() as f64 * spec.tick_size <= 0.0 {
                return Err(DataError::BadParameter(format!("synthetic mid collapsed to {mid} at ts {ts}")));
            }
            lobs.push(symmetric_book(ts, mid, spread, spec.tick_size, &spec.depth_profile)?);
            bars.push(OhlcBar {
                timestamp: ts,
                open,
                high: open.max(mid),
                low: open.min(mid),
                close: mid,
            });
            ts += 1;
        }
    }
    MarketSeries::new(spec.symbol.clone(), lobs, bars)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_volatility_is_constant() {
        let spec = SynthSpec::new(7, vec![Regime::new(RegimeKind::Sideways, 100, 0.0, 0.0)]);
        let s = synth_market(&spec).unwrap();
        assert_eq!(s.len(), 100);
        assert!(s.lobs.iter().all(|l| l.mid() == s.lobs[0].mid()));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = SynthSpec::new(11, vec![Regime::new(RegimeKind::Bull, 500, 1e-5, 1e-4)]);
        assert_eq!(synth_market(&spec).unwrap(), synth_market(&spec).unwrap());
        let other = SynthSpec { seed: 12, ..spec.clone() };
        assert_ne!(synth_market(&spec).unwrap(), synth_market(&other).unwrap());
    }

    #[test]
    fn rejects_bad_regimes() {
        let spec = SynthSpec::new(1, vec![Regime::new(RegimeKind::Bull, 0, 0.0, 0.0)]);
        assert!(synth_market(&spec).is_err());
        let spec = SynthSpec::new(1, vec![Regime::new(RegimeKind::Bull, 5, 0.0, -1.0)]);
        assert!(synth_market(&spec).is_err());
    }

    #[test]
    fn zero_spread_gives_locked_book() {
        let spec = SynthSpec::new(1, vec![Regime::new(RegimeKind::Sideways, 3, 0.0, 0.0)]).with_spread_ticks(0);
        let s = synth_market(&spec).unwrap();
        assert_eq!(s.lobs[0].best_bid(), s.lobs[0].best_ask());
    }

    #[test]
    fn bull_regime_mostly_ends_higher() {
        let mut up = 0;
        for seed in 0..100 {
            let spec = SynthSpec::new(seed, vec![Regime::new(RegimeKind::Bull, 10_000, 1e-5, 1e-4)]);
            let s = synth_market(&spec).unwrap();
            if s.lobs.last().unwrap().mid() > s.lobs[0].mid() {
                up += 1;
            }
        }
        assert!(up > 95, "{up}");
    }
}
