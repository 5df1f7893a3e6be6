use std::ops::Range;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::learner::ChunkSampler;
use crate::marketdata::MarketSeries;

use super::PoolError;

/// A fixed-length slice of the training series and its buy-and-hold return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: usize,
    pub start: usize,
    pub end: usize,
    /// `(mid_end - mid_start) / mid_start`.
    pub ret: f64,
}

impl Chunk {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }
}

/// Splits `series` into contiguous chunks of `len` seconds, dropping the partial tail.
pub fn chunk_dataset(series: &MarketSeries, len: usize) -> Result<Vec<Chunk>, PoolError> {
    if len <= 1 {
        return Err(PoolError::Config(format!("chunk length must exceed 1, got {len}")));
    }
    if series.len() < len {
        return Err(PoolError::Config(format!(
            "series of {} seconds is shorter than one chunk ({len})",
            series.len()
        )));
    }
    Ok((0..series.len() / len)
        .map(|id| {
            let (start, end) = (id * len, (id + 1) * len);
            let first = series.lobs[start].mid();
            let last = series.lobs[end - 1].mid();
            Chunk {
                id,
                start,
                end,
                ret: (last - first) / first,
            }
        })
        .collect())
}

/// Sample quantile with linear interpolation between order statistics
/// (`h = (n - 1) q`).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Silverman's rule `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`, with the sample standard
/// deviation (`n - 1`). A zero IQR falls back to the standard deviation alone.
pub fn silverman_base(samples: &[f64]) -> Result<f64, PoolError> {
    let n = samples.len();
    if n < 2 || samples.iter().any(|v| !v.is_finite()) {
        return Err(PoolError::DegenerateSample);
    }
    let s = sorted(samples);
    if s[0] == s[n - 1] {
        return Err(PoolError::DegenerateSample);
    }
    let mean = s.iter().sum::<f64>() / n as f64;
    let sd = (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let iqr = quantile(&s, 0.75) - quantile(&s, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    Ok(0.9 * spread * (n as f64).powf(-0.2))
}

fn gaussian(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Gaussian-kernel density estimate `(1 / nh) * sum_i K((x - r_i) / h)`.
pub fn kde_pdf(x: f64, samples: &[f64], h: f64) -> f64 {
    samples.iter().map(|r| gaussian((x - r) / h)).sum::<f64>() / (samples.len() as f64 * h)
}

/// Leave-one-out log-likelihood of `samples` under a KDE with bandwidth `h`.
pub fn loo_log_likelihood(samples: &[f64], h: f64) -> f64 {
    let n = samples.len();
    (0..n)
        .map(|i| {
            let dens = samples
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, r)| gaussian((samples[i] - r) / h))
                .sum::<f64>()
                / ((n - 1) as f64 * h);
            dens.ln()
        })
        .sum()
}

/// Picks `h0 * 2^k`, `k` in `-2..=2`, maximizing the leave-one-out log-likelihood;
/// the first maximum wins.
pub fn bandwidth_search(samples: &[f64], h0: f64) -> f64 {
    let mut best = (f64::NEG_INFINITY, h0);
    for k in -2..=2 {
        let h = h0 * 2f64.powi(k);
        let ll = loo_log_likelihood(samples, h);
        if ll > best.0 {
            best = (ll, h);
        }
    }
    best.1
}

/// Fitted density of chunk returns and the quantile band used by the priority.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingModel {
    pub returns: Vec<f64>,
    pub bandwidth: f64,
    pub theta: f64,
    pub lower: f64,
    pub upper: f64,
}

impl SamplingModel {
    pub fn fit(returns: &[f64], theta: f64) -> Result<Self, PoolError> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(PoolError::Config(format!("theta must be in (0, 1), got {theta}")));
        }
        let h0 = silverman_base(returns)?;
        let bandwidth = bandwidth_search(returns, h0);
        let s = sorted(returns);
        Ok(Self {
            returns: returns.to_vec(),
            bandwidth,
            theta,
            lower: quantile(&s, theta / 2.0),
            upper: quantile(&s, 1.0 - theta / 2.0),
        })
    }

    pub fn pdf(&self, x: f64) -> f64 {
        kde_pdf(x, &self.returns, self.bandwidth)
    }

    /// Log of the priority: `beta * r - ln pdf(r)` inside the band, `beta * r` outside.
    pub fn log_priority(&self, r: f64, beta: f64) -> Result<f64, PoolError> {
        if r >= self.lower && r <= self.upper {
            let p = self.pdf(r);
            if !(p > 0.0) {
                return Err(PoolError::ZeroDensity(r));
            }
            Ok(beta * r - p.ln())
        } else {
            Ok(beta * r)
        }
    }

    pub fn priority(&self, r: f64, beta: f64) -> Result<f64, PoolError> {
        Ok(self.log_priority(r, beta)?.exp())
    }

    /// Priorities of `returns` normalized to sum to 1 (computed in log space).
    pub fn distribution(&self, returns: &[f64], beta: f64) -> Result<Vec<f64>, PoolError> {
        let logs = returns.iter().map(|&r| self.log_priority(r, beta)).collect::<Result<Vec<_>, _>>()?;
        Ok(normalize_log_weights(&logs))
    }
}

pub fn normalize_log_weights(logs: &[f64]) -> Vec<f64> {
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

/// Draws chunk indices proportionally to `weights`.
pub fn sample_indices<R: Rng>(weights: &[f64], rng: &mut R, count: usize) -> Result<Vec<usize>, PoolError> {
    let dist = WeightedIndex::new(weights).map_err(|e| PoolError::Config(format!("bad weights: {e}")))?;
    Ok((0..count).map(|_| dist.sample(rng)).collect())
}

/// Fits the model on the chunk returns and draws `count` chunk indices with preference `beta`.
pub fn sample_chunks<R: Rng>(chunks: &[Chunk], beta: f64, theta: f64, rng: &mut R, count: usize) -> Result<Vec<usize>, PoolError> {
    let returns: Vec<f64> = chunks.iter().map(|c| c.ret).collect();
    let model = SamplingModel::fit(&returns, theta)?;
    sample_indices(&model.distribution(&returns, beta)?, rng, count)
}

/// Preference-weighted chunk source for the low-level trainer.
#[derive(Debug, Clone)]
pub struct PrioritySampler {
    chunks: Vec<Chunk>,
    dist: WeightedIndex<f64>,
    probabilities: Vec<f64>,
}

impl PrioritySampler {
    pub fn new(chunks: Vec<Chunk>, beta: f64, theta: f64) -> Result<Self, PoolError> {
        let returns: Vec<f64> = chunks.iter().map(|c| c.ret).collect();
        let model = SamplingModel::fit(&returns, theta)?;
        let probabilities = model.distribution(&returns, beta)?;
        let dist = WeightedIndex::new(&probabilities).map_err(|e| PoolError::Config(format!("bad weights: {e}")))?;
        Ok(Self {
            chunks,
            dist,
            probabilities,
        })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }
}

impl ChunkSampler for PrioritySampler {
    fn next_chunk(&mut self, rng: &mut ChaCha8Rng) -> Range<usize> {
        self.chunks[self.dist.sample(rng)].range()
    }

    fn chunk_len(&self) -> usize {
        self.chunks[0].end - self.chunks[0].start
    }
}
