//! Market observations: LOB snapshots, OHLC bars, CSV ingestion, synthetic markets,
//! indicators and the feature registry.

mod csv_io;
pub mod features;
pub mod indicators;
pub mod synth;
mod types;

pub use csv_io::{header as csv_header, load_market_csv, read_market_csv, save_market_csv, write_market_csv, CsvSpec, FillPolicy};
pub use features::{
    high_level_features, low_level_features, FeatureEntry, FeatureMatrix, FeatureSchema, FeatureVector, Formula,
    HIGH_DIM, LOW_DIM,
};
pub use indicators::{ema, imbalance, macd, Macd, MacdSpans};
pub use synth::{five_regime_suite, synth_market, Regime, RegimeKind, SynthSpec, DRIFT_UNIT, FIVE_REGIME_ORDER, PRESET_VOLATILITY};
pub use types::{aggregate_minutes, Level, LobSnapshot, MarketSeries, OhlcBar, SeriesMeta, DEFAULT_DEPTH};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("invalid book at ts {timestamp}: {reason}")]
    InvalidBook { timestamp: i64, reason: String },
    #[error("crossed book at ts {timestamp}: ask {ask} <= bid {bid}")]
    CrossedBook { timestamp: i64, bid: f64, ask: f64 },
    #[error("invalid OHLC bar at ts {timestamp}")]
    InvalidBar { timestamp: i64 },
    #[error("empty series")]
    Empty,
    #[error("{lobs} snapshots but {bars} bars")]
    LengthMismatch { lobs: usize, bars: usize },
    #[error("snapshot and bar timestamps differ at index {index}")]
    Misaligned { index: usize },
    #[error("timestamps not on a 1-second stride at index {index}")]
    Stride { index: usize },
    #[error("range {start}..{end} out of bounds for length {len}")]
    BadRange { start: usize, end: usize, len: usize },
    #[error("non-monotonic at row {row}")]
    NonMonotonic { row: usize },
    #[error("gap of {gap} seconds at row {row}")]
    Gap { row: usize, gap: i64 },
    #[error("row {row}: {message}")]
    Csv { row: usize, message: String },
    #[error("row {row}: {source}")]
    Row {
        row: usize,
        #[source]
        source: Box<DataError>,
    },
    #[error("empty book window")]
    EmptyBookWindow,
    #[error("insufficient history: need {needed}, got {got}")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("{0}")]
    BadParameter(String),
    #[error("io: {0}")]
    Io(String),
}
