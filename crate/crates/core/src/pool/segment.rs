use serde::{Deserialize, Serialize};

use crate::marketdata::OhlcBar;

use super::sampling::quantile;
use super::PoolError;

/// Names for the default five trend labels, steepest bear first.
pub const LABEL_NAMES_5: [&str; 5] = ["bear", "pullback", "sideways", "rally", "bull"];

pub fn label_name(label: usize, m: usize) -> String {
    if m == 5 {
        LABEL_NAMES_5[label - 1].to_string()
    } else {
        format!("label_{label}")
    }
}

/// Contiguous span `[start, end)` of a minute price series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    /// Average per-minute slope of the buy-and-hold net curve.
    pub slope: f64,
    pub label: Option<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    pub theta: f64,
    pub m: usize,
    /// Centered moving-average window, in minutes.
    pub filter_window: usize,
    /// Adjacent segments merge when their slopes differ by at most this much...
    pub slope_tol: f64,
    /// ...and the DTW distance of their normalized net curves is at most this.
    pub dtw_tol: f64,
    /// Segments shorter than this many minutes always merge into their left neighbour
    /// (the first one into its right neighbour).
    pub min_len: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            theta: 0.1,
            m: 5,
            filter_window: 61,
            slope_tol: 2e-4,
            dtw_tol: 0.5,
            min_len: 5,
        }
    }
}

/// Centered moving average with the series edges padded by repetition.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let n = xs.len();
    if window <= 1 || n == 0 {
        return xs.to_vec();
    }
    let left = (window - 1) / 2;
    let right = window - 1 - left;
    let at = |i: isize| xs[i.clamp(0, n as isize - 1) as usize];
    let mut sum: f64 = (-(left as isize)..=right as isize).map(at).sum();
    let mut out = Vec::with_capacity(n);
    for i in 0..n as isize {
        out.push(sum / window as f64);
        sum += at(i + right as isize + 1) - at(i - left as isize);
    }
    out
}

/// Indices where the direction of `xs` flips. Flat stretches carry the previous direction.
pub fn turning_points(xs: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut last_sign = 0.0;
    for i in 1..xs.len() {
        let d = xs[i] - xs[i - 1];
        if d == 0.0 {
            continue;
        }
        let s = d.signum();
        if last_sign != 0.0 && s != last_sign {
            out.push(i - 1);
        }
        last_sign = s;
    }
    out
}

/// Net curve of buying at the segment start, sampled through the first point of the
/// next segment (or the series end).
fn net_curve(prices: &[f64], start: usize, end: usize) -> Vec<f64> {
    let last = end.min(prices.len() - 1).max(start);
    let p0 = prices[start];
    prices[start..=last].iter().map(|p| p / p0).collect()
}

fn slope_of(prices: &[f64], start: usize, end: usize) -> f64 {
    let curve = net_curve(prices, start, end);
    if curve.len() < 2 {
        return 0.0;
    }
    (curve[curve.len() - 1] - 1.0) / (curve.len() - 1) as f64
}

/// Linear resampling of `xs` to `n` points.
pub fn resample(xs: &[f64], n: usize) -> Vec<f64> {
    if xs.len() == 1 {
        return vec![xs[0]; n];
    }
    (0..n)
        .map(|i| {
            let pos = i as f64 * (xs.len() - 1) as f64 / (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(xs.len() - 1);
            xs[lo] + (pos - lo as f64) * (xs[hi] - xs[lo])
        })
        .collect()
}

/// Dynamic time warping with absolute-difference cost and unit steps in all three directions.
pub fn dtw_distance(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j].min(cur[j - 1]).min(prev[j - 1]);
            cur[j] = (a[i - 1] - b[j - 1]).abs() + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

const DTW_POINTS: usize = 64;

fn curve_distance(prices: &[f64], a: &Segment, b: &Segment) -> f64 {
    let ca = resample(&net_curve(prices, a.start, a.end), DTW_POINTS);
    let cb = resample(&net_curve(prices, b.start, b.end), DTW_POINTS);
    dtw_distance(&ca, &cb)
}

/// Splits `prices` at the turning points of its filtered version.
pub fn split_at_extrema(prices: &[f64], filter_window: usize) -> Vec<Segment> {
    let filtered = moving_average(prices, filter_window);
    let mut cuts = vec![0];
    cuts.extend(turning_points(&filtered).into_iter().filter(|&i| i > 0));
    cuts.push(prices.len());
    cuts.dedup();
    cuts.windows(2)
        .map(|w| Segment {
            start: w[0],
            end: w[1],
            slope: slope_of(prices, w[0], w[1]),
            label: None,
        })
        .collect()
}

/// Repeated left-to-right passes merging adjacent segments with close slopes and
/// similar net curves, or where one is shorter than `cfg.min_len`, until a pass makes
/// no change.
pub fn merge_similar(prices: &[f64], mut segs: Vec<Segment>, cfg: &SegmentConfig) -> Vec<Segment> {
    loop {
        let before = segs.len();
        let mut out: Vec<Segment> = Vec::with_capacity(segs.len());
        for s in segs {
            if let Some(last) = out.last_mut() {
                let short = s.len() < cfg.min_len || last.len() < cfg.min_len;
                if short
                    || ((last.slope - s.slope).abs() <= cfg.slope_tol && curve_distance(prices, last, &s) <= cfg.dtw_tol)
                {
                    last.end = s.end;
                    last.slope = slope_of(prices, last.start, last.end);
                    continue;
                }
            }
            out.push(s);
        }
        segs = out;
        if segs.len() == before {
            return segs;
        }
    }
}

/// Band label for slope `r` given quantile bounds `lower < upper`: above `upper` is `m`,
/// at or below `lower` is 1, otherwise `j` with `lower + (j-2)w < r <= lower + (j-1)w`,
/// `w = (upper - lower) / (m - 2)`.
pub fn band_label(r: f64, lower: f64, upper: f64, m: usize) -> usize {
    if r > upper {
        return m;
    }
    if r <= lower {
        return 1;
    }
    let w = (upper - lower) / (m - 2) as f64;
    for j in 2..m {
        if r <= lower + (j - 1) as f64 * w {
            return j;
        }
    }
    m - 1
}

/// Filters, splits at extrema, merges similar neighbours, then labels each segment by
/// quantile bands of the segment slopes.
pub fn segment_and_label(prices: &[f64], cfg: &SegmentConfig) -> Result<Vec<Segment>, PoolError> {
    if cfg.m < 3 {
        return Err(PoolError::Config(format!("need at least 3 labels, got {}", cfg.m)));
    }
    if !(cfg.theta > 0.0 && cfg.theta < 1.0) {
        return Err(PoolError::Config(format!("theta must be in (0, 1), got {}", cfg.theta)));
    }
    if prices.len() <= cfg.filter_window {
        return Err(PoolError::Config(format!(
            "series of {} minutes is not longer than the filter window {}",
            prices.len(),
            cfg.filter_window
        )));
    }
    let segs = split_at_extrema(prices, cfg.filter_window);
    let mut segs = merge_similar(prices, segs, cfg);
    let mut slopes: Vec<f64> = segs.iter().map(|s| s.slope).collect();
    slopes.sort_by(f64::total_cmp);
    let lower = quantile(&slopes, cfg.theta / 2.0);
    let upper = quantile(&slopes, 1.0 - cfg.theta / 2.0);
    for s in &mut segs {
        s.label = Some(if upper > lower {
            band_label(s.slope, lower, upper, cfg.m)
        } else if s.slope > cfg.slope_tol {
            cfg.m
        } else if s.slope < -cfg.slope_tol {
            1
        } else {
            cfg.m.div_ceil(2)
        });
    }
    Ok(segs)
}

/// A labeled span expressed in timestamps: `[start_ts, end_ts)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSpan {
    pub start_ts: i64,
    pub end_ts: i64,
    pub slope: f64,
    pub label: usize,
    pub label_name: String,
}

pub const LABEL_CSV_HEADER: &str = "start_ts,end_ts,slope,label,label_name";

/// Labels the minute-close series of `bars` and maps segments to timestamps.
pub fn label_minute_bars(bars: &[OhlcBar], cfg: &SegmentConfig) -> Result<Vec<LabeledSpan>, PoolError> {
    let closes: Vec<f64> = bars.iter().map(|b| b.close).collect();
    let segs = segment_and_label(&closes, cfg)?;
    Ok(segs
        .iter()
        .map(|s| {
            let label = s.label.expect("labelled");
            LabeledSpan {
                start_ts: bars[s.start].timestamp,
                end_ts: bars[s.end - 1].timestamp + 60,
                slope: s.slope,
                label,
                label_name: label_name(label, cfg.m),
            }
        })
        .collect())
}

pub fn write_labels(spans: &[LabeledSpan], w: impl std::io::Write) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(w);
    for s in spans {
        wtr.serialize(s)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_labels(r: impl std::io::Read) -> Result<Vec<LabeledSpan>, csv::Error> {
    csv::Reader::from_reader(r).deserialize().collect()
}
