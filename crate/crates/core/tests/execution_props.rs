mod common;

use hft_core::execution::{execute_market_order, fillable, ActionGrid, LowLevelEnv, FEE_TABLE};
use hft_core::marketdata::{synth_market, Level, LobSnapshot, Regime, RegimeKind, SynthSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn two_level_buy_costs_201() {
    let lob = LobSnapshot::new(0, vec![Level::new(99.0, 1.0)], vec![Level::new(100.0, 1.0), Level::new(101.0, 2.0)]).unwrap();
    let f = execute_market_order(&lob, 2.0, 0.0).unwrap();
    assert_eq!((f.cost, f.vwap, f.levels_consumed), (201.0, 100.5, 2));
}

proptest! {
    #[test]
    fn vwap_is_monotone_in_size(seed in any::<u64>(), spread in 0.0f64..1.0, f1 in 0.01f64..1.0, f2 in 0.01f64..1.0, fee in 0.0f64..0.01) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lob = common::random_book(&mut rng, 0, 100.0, spread, 5);
        for buy in [true, false] {
            let cap = fillable(&lob, buy);
            let (small, large) = (f1.min(f2) * cap, f1.max(f2) * cap);
            let sign = if buy { 1.0 } else { -1.0 };
            let a = execute_market_order(&lob, sign * small, fee).unwrap();
            let b = execute_market_order(&lob, sign * large, fee).unwrap();
            if buy {
                prop_assert!(a.vwap <= b.vwap + 1e-12);
            } else {
                prop_assert!(a.vwap + 1e-12 >= b.vwap);
            }
        }
    }

    #[test]
    fn round_trip_never_profits(seed in any::<u64>(), spread in 0.0f64..1.0, frac in 0.01f64..1.0, fee in prop_oneof![Just(0.0), Just(FEE_TABLE), 0.0f64..0.01]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lob = common::random_book(&mut rng, 0, 100.0, spread, 5);
        let size = frac * fillable(&lob, true).min(fillable(&lob, false));
        let buy = execute_market_order(&lob, size, fee).unwrap();
        let sell = execute_market_order(&lob, -size, fee).unwrap();
        let pnl = -(buy.cost + sell.cost);
        prop_assert!(pnl <= 1e-9);
        if spread > 1e-9 || fee > 0.0 {
            prop_assert!(pnl < 0.0);
        }
    }

    #[test]
    fn rewards_telescope_to_net_value_change(seed in 0u64..1000, n in 3usize..40, k in 2usize..5, fee in prop_oneof![Just(0.0), Just(FEE_TABLE)]) {
        let series = common::random_series(seed, n, 0.2);
        let grid = ActionGrid::new(2.0, k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let mut env = LowLevelEnv::new(&series, grid, fee, 0, n, rng.random_range(0..k), 1000.0).unwrap();
        let v0 = env.net_value();
        let mut total = 0.0;
        while !env.done() {
            total += env.step(rng.random_range(0..k)).unwrap().reward;
        }
        let dv = env.net_value() - v0;
        prop_assert!((total - dv).abs() <= 1e-9 * dv.abs().max(1.0), "{total} vs {dv}");
    }
}

#[test]
fn synthetic_series_telescopes_over_long_episodes() {
    let spec = SynthSpec::new(4, vec![Regime::new(RegimeKind::Bull, 2000, 1e-5, 1e-4)]);
    let series = synth_market(&spec).unwrap();
    let grid = ActionGrid::new(1.0, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut env = LowLevelEnv::new(&series, grid, FEE_TABLE, 0, series.len(), 0, 500.0).unwrap();
    let v0 = env.net_value();
    let mut total = 0.0;
    while !env.done() {
        total += env.step(rng.random_range(0..5)).unwrap().reward;
    }
    let dv = env.net_value() - v0;
    assert!((total - dv).abs() <= 1e-9 * dv.abs().max(1.0));
}
