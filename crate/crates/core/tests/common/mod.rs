#![allow(dead_code)]

use hft_core::marketdata::{Level, LobSnapshot, MarketSeries, OhlcBar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random valid book: best prices half a spread from `mid`, strictly ordered levels.
pub fn random_book(rng: &mut impl Rng, ts: i64, mid: f64, spread: f64, depth: usize) -> LobSnapshot {
    let mut bids = Vec::with_capacity(depth);
    let mut asks = Vec::with_capacity(depth);
    let (mut b, mut a) = (mid - 0.5 * spread, mid + 0.5 * spread);
    for _ in 0..depth {
        bids.push(Level::new(b, rng.random_range(0.2..3.0)));
        asks.push(Level::new(a, rng.random_range(0.2..3.0)));
        b -= rng.random_range(0.01..0.5);
        a += rng.random_range(0.01..0.5);
    }
    if spread > 0.0 {
        LobSnapshot::new(ts, bids, asks).unwrap()
    } else {
        LobSnapshot::new_locked(ts, bids, asks).unwrap()
    }
}

/// Short random walk of random books.
pub fn random_series(seed: u64, n: usize, spread: f64) -> MarketSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mid = 100.0;
    let mut lobs = Vec::with_capacity(n);
    let mut bars = Vec::with_capacity(n);
    for i in 0..n {
        let open = mid;
        if i > 0 {
            mid += rng.random_range(-1.0..1.0);
        }
        let ts = 1_700_000_000 + i as i64;
        lobs.push(random_book(&mut rng, ts, mid, spread, 3));
        bars.push(OhlcBar::new(ts, open, open.max(mid), open.min(mid), mid).unwrap());
    }
    MarketSeries::new("TEST", lobs, bars).unwrap()
}
