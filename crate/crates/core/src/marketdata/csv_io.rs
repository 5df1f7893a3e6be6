//! Canonical per-second CSV format:
//! `ts,bid_px_1..m,bid_qty_1..m,ask_px_1..m,ask_qty_1..m,open,high,low,close`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, Level, LobSnapshot, MarketSeries, OhlcBar, DEFAULT_DEPTH};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillPolicy {
    /// Gaps wider than the tolerance are an error.
    #[default]
    Reject,
    /// Any gap is filled by repeating the last snapshot.
    Hold,
}

/// Column layout and gap handling for [`load_market_csv`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSpec {
    pub levels: usize,
    /// Largest accepted timestamp step between consecutive rows; missing seconds inside an
    /// accepted gap are filled by holding the previous snapshot.
    pub gap_tolerance: i64,
    pub fill: FillPolicy,
    pub symbol: String,
}

impl Default for CsvSpec {
    fn default() -> Self {
        Self {
            levels: DEFAULT_DEPTH,
            gap_tolerance: 1,
            fill: FillPolicy::Reject,
            symbol: "UNKNOWN".into(),
        }
    }
}

pub fn header(levels: usize) -> Vec<String> {
    let mut cols = vec!["ts".to_string()];
    for prefix in ["bid_px", "bid_qty", "ask_px", "ask_qty"] {
        cols.extend((1..=levels).map(|i| format!("{prefix}_{i}")));
    }
    cols.extend(["open", "high", "low", "close"].map(String::from));
    cols
}

pub fn load_market_csv(path: impl AsRef<Path>, spec: &CsvSpec) -> Result<MarketSeries, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    read_market_csv(file, spec)
}

pub fn read_market_csv(reader: impl Read, spec: &CsvSpec) -> Result<MarketSeries, DataError> {
    let m = spec.levels;
    if m == 0 {
        return Err(DataError::BadParameter("levels must be >= 1".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let expected = header(m);
    let got: Vec<String> = rdr
        .headers()
        .map_err(|e| DataError::Csv { row: 0, message: e.to_string() })?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if got != expected {
        return Err(DataError::Csv {
            row: 0,
            message: format!("header mismatch: expected {} columns starting {:?}", expected.len(), &expected[..3]),
        });
    }

    let mut rows: Vec<(LobSnapshot, OhlcBar)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| DataError::Csv { row, message: e.to_string() })?;
        let num = |j: usize| -> Result<f64, DataError> {
            let s = rec.get(j).unwrap_or("").trim();
            s.parse::<f64>().map_err(|_| DataError::Csv {
                row,
                message: format!("column {} is not a number: {s:?}", expected[j]),
            })
        };
        let ts_str = rec.get(0).unwrap_or("").trim();
        let ts: i64 = ts_str.parse().map_err(|_| DataError::Csv {
            row,
            message: format!("bad timestamp {ts_str:?}"),
        })?;
        let mut bids = Vec::with_capacity(m);
        let mut asks = Vec::with_capacity(m);
        for l in 0..m {
            bids.push(Level::new(num(1 + l)?, num(1 + m + l)?));
            asks.push(Level::new(num(1 + 2 * m + l)?, num(1 + 3 * m + l)?));
        }
        let base = 1 + 4 * m;
        let lob = LobSnapshot { timestamp: ts, bids, asks };
        lob.validate(m, false).map_err(|e| DataError::Row { row, source: Box::new(e) })?;
        let bar = OhlcBar::new(ts, num(base)?, num(base + 1)?, num(base + 2)?, num(base + 3)?)
            .map_err(|e| DataError::Row { row, source: Box::new(e) })?;
        rows.push((lob, bar));
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    if let Some(i) = (1..rows.len()).find(|&i| rows[i].0.timestamp <= rows[i - 1].0.timestamp) {
        return Err(DataError::NonMonotonic { row: i + 1 });
    }

    let mut lobs = Vec::with_capacity(rows.len());
    let mut bars = Vec::with_capacity(rows.len());
    for (i, (lob, bar)) in rows.into_iter().enumerate() {
        if let Some(prev) = lobs.last().cloned() {
            let prev: LobSnapshot = prev;
            let gap = lob.timestamp - prev.timestamp;
            if gap > spec.gap_tolerance && spec.fill == FillPolicy::Reject {
                return Err(DataError::Gap { row: i + 1, gap });
            }
            let close = bars.last().map(|b: &OhlcBar| b.close).unwrap_or(bar.open);
            for ts in prev.timestamp + 1..lob.timestamp {
                lobs.push(LobSnapshot { timestamp: ts, ..prev.clone() });
                bars.push(OhlcBar::flat(ts, close));
            }
        }
        lobs.push(lob);
        bars.push(bar);
    }
    MarketSeries::new(spec.symbol.clone(), lobs, bars)
}

/// Writes `series` in the canonical format. Every snapshot must carry the same depth.
pub fn write_market_csv(series: &MarketSeries, writer: impl Write) -> Result<(), DataError> {
    let m = series.lobs[0].bids.len();
    if series.lobs.iter().any(|l| l.bids.len() != m || l.asks.len() != m) {
        return Err(DataError::BadParameter("non-uniform book depth cannot be written".into()));
    }
    let io = |e: csv::Error| DataError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header(m)).map_err(io)?;
    let mut fields: Vec<String> = Vec::with_capacity(1 + 4 * m + 4);
    for (lob, bar) in series.lobs.iter().zip(&series.second_bars) {
        fields.clear();
        fields.push(lob.timestamp.to_string());
        fields.extend(lob.bids.iter().map(|l| l.price.to_string()));
        fields.extend(lob.bids.iter().map(|l| l.qty.to_string()));
        fields.extend(lob.asks.iter().map(|l| l.price.to_string()));
        fields.extend(lob.asks.iter().map(|l| l.qty.to_string()));
        fields.extend([bar.open, bar.high, bar.low, bar.close].iter().map(|v| v.to_string()));
        w.write_record(&fields).map_err(io)?;
    }
    w.flush().map_err(|e| DataError::Io(e.to_string()))?;
    Ok(())
}

pub fn save_market_csv(series: &MarketSeries, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    write_market_csv(series, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(ts: i64, mid: f64) -> String {
        format!("{ts},{},{},{},{},{mid},{mid},{mid},{mid}", mid - 0.5, 1.0, mid + 0.5, 2.0)
    }

    fn csv_of(rows: &[String]) -> String {
        let mut s = header(1).join(",");
        for r in rows {
            s.push('\n');
            s.push_str(r);
        }
        s
    }

    fn spec1() -> CsvSpec {
        CsvSpec { levels: 1, ..CsvSpec::default() }
    }

    #[test]
    fn parses_well_formed_rows() {
        let text = csv_of(&[row(60, 100.0), row(61, 101.0), row(62, 100.5)]);
        let s = read_market_csv(text.as_bytes(), &spec1()).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.lobs[1].best_ask(), 101.5);
        assert_eq!(s.lobs[1].asks[0].qty, 2.0);
    }

    #[test]
    fn non_monotonic_names_the_row() {
        let text = csv_of(&[row(1, 100.0), row(3, 100.0), row(2, 100.0)]);
        let err = read_market_csv(text.as_bytes(), &spec1()).unwrap_err();
        assert_eq!(err.to_string(), "non-monotonic at row 3");
    }

    #[test]
    fn crossed_book_rejected() {
        let bad = "5,101,1,100,1,100,100,100,100".to_string();
        let text = csv_of(&[row(4, 100.0), bad]);
        let err = read_market_csv(text.as_bytes(), &spec1()).unwrap_err();
        assert!(matches!(err, DataError::Row { row: 2, .. }), "{err}");
    }

    #[test]
    fn gaps_rejected_unless_hold() {
        let text = csv_of(&[row(0, 100.0), row(1, 100.0), row(5, 101.0)]);
        let err = read_market_csv(text.as_bytes(), &spec1()).unwrap_err();
        assert!(matches!(err, DataError::Gap { row: 3, gap: 4 }));
        let hold = CsvSpec { fill: FillPolicy::Hold, ..spec1() };
        let s = read_market_csv(text.as_bytes(), &hold).unwrap();
        assert_eq!(s.len(), 6);
        assert_eq!(s.lobs[3].mid(), 100.0);
        assert_eq!(s.lobs[3].timestamp, 3);
        assert_eq!(s.lobs[5].mid(), 101.0);
    }

    #[test]
    fn bad_header_rejected() {
        let text = "ts,foo\n1,2";
        assert!(read_market_csv(text.as_bytes(), &spec1()).is_err());
    }
}
