mod common;

use hft_core::execution::{execute_market_order, ActionGrid, ExecError, LowLevelEnv, FEE_TABLE};
use hft_core::marketdata::{synth_market, LobSnapshot, Regime, RegimeKind, SynthSpec};
use hft_core::oracle::{build_q_star, optimal_rollout, teacher_operator_step, QTable, ToyMdp, INFEASIBLE};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Best total reward over every target sequence, skipping orders the book cannot fill.
fn exhaustive_best(lobs: &[LobSnapshot], grid: ActionGrid, fee: f64, t: usize, p: usize) -> f64 {
    if t + 1 == lobs.len() {
        return 0.0;
    }
    let pos = grid.positions();
    let mut best = f64::NEG_INFINITY;
    for a in 0..grid.n_actions {
        let cost = if a == p {
            0.0
        } else {
            match execute_market_order(&lobs[t], pos[a] - pos[p], fee) {
                Ok(f) => f.cost,
                Err(ExecError::InsufficientDepth { .. }) => continue,
                Err(e) => panic!("{e}"),
            }
        };
        let r = pos[a] * lobs[t + 1].best_bid() - (pos[p] * lobs[t].best_bid() + cost);
        best = best.max(r + exhaustive_best(lobs, grid, fee, t + 1, a));
    }
    best
}

#[test]
fn qstar_matches_exhaustive_enumeration() {
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=6);
        let k = rng.random_range(2..=3);
        let fee = if seed % 2 == 0 { 0.0 } else { FEE_TABLE };
        let spread = if seed % 4 < 2 { 0.0 } else { 0.01 };
        let series = common::random_series(seed, n, spread);
        let grid = ActionGrid::new(rng.random_range(0.5..4.0), k).unwrap();
        let q = build_q_star(&series.lobs, grid, fee).unwrap();
        for p in 0..k {
            let want = exhaustive_best(&series.lobs, grid, fee, 0, p);
            let got = q.best(0, p);
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "seed {seed} p {p}: {got} vs {want}");
        }
    }
}

#[test]
fn optimal_rollout_buys_and_holds_a_rising_market() {
    let spec = SynthSpec::new(0, vec![Regime::new(RegimeKind::Bull, 6, 1e-3, 0.0)]).with_spread_ticks(0);
    let series = synth_market(&spec).unwrap();
    let grid = ActionGrid::new(1.0, 3).unwrap();
    let q = build_q_star(&series.lobs, grid, 0.0).unwrap();
    let mut env = LowLevelEnv::new(&series, grid, 0.0, 0, 6, 0, 0.0).unwrap();
    let rollout = optimal_rollout(&q, &mut env).unwrap();
    assert!(rollout.iter().all(|tr| tr.action == 2));
    let total: f64 = rollout.iter().map(|tr| tr.reward).sum();
    assert!((total - exhaustive_best(&series.lobs, grid, 0.0, 0, 0)).abs() < 1e-12);
}

fn random_q(rng: &mut impl Rng, s: usize, a: usize) -> QTable {
    QTable {
        n_states: s,
        n_actions: a,
        values: (0..s * a).map(|_| rng.random_range(-10.0..10.0)).collect(),
    }
}

#[test]
fn teacher_operator_fixed_point_and_non_expansion() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, a) = (rng.random_range(2..=6), rng.random_range(2..=4));
        let gamma = rng.random_range(0.5..0.95);
        let lambda = [0.2, 0.5, 0.8][seed as usize % 3];
        let mdp = ToyMdp::random(seed, s, a, gamma).unwrap();
        let qstar = mdp.optimal_q(1e-14);
        let h = teacher_operator_step(&qstar, &mdp, lambda, &qstar).unwrap();
        assert!(h.sup_distance(&qstar) < 1e-8);
        for _ in 0..10 {
            let (q1, q2) = (random_q(&mut rng, s, a), random_q(&mut rng, s, a));
            let h1 = teacher_operator_step(&q1, &mdp, lambda, &qstar).unwrap();
            let h2 = teacher_operator_step(&q2, &mdp, lambda, &qstar).unwrap();
            assert!(h1.sup_distance(&h2) <= q1.sup_distance(&q2) + 1e-12);
        }
        let mut q = QTable::zeros(s, a);
        let mut iters = 0;
        while q.sup_distance(&qstar) >= 1e-6 {
            q = teacher_operator_step(&q, &mdp, lambda, &qstar).unwrap();
            iters += 1;
            assert!(iters <= 2000, "seed {seed} did not converge");
        }
    }
}

proptest! {
    #[test]
    fn qstar_rows_dominate_their_alternatives(seed in 0u64..500, n in 2usize..8, k in 2usize..4) {
        let series = common::random_series(seed, n, 0.02);
        let grid = ActionGrid::new(1.5, k).unwrap();
        let q = build_q_star(&series.lobs, grid, FEE_TABLE).unwrap();
        for t in 0..n - 1 {
            for p in 0..k {
                let g = q.greedy_action(t, p);
                let row = q.row(t, p);
                prop_assert!(row[g] != INFEASIBLE);
                prop_assert!(row.iter().all(|&v| v <= row[g]));
                // staying put never costs anything, so it is always feasible
                prop_assert!(row[p] != INFEASIBLE);
            }
        }
    }
}
