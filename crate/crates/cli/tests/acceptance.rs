//! Acceptance checks, one line per criterion. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test -p hft-cli --test acceptance -- 1 9`.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use hft_cli::ablation::{median_cs, median_rs, run_ablation, Variant, CONVERGED};
use hft_core::backtest::{compute_metrics, iv_strategy, macd_strategy, EquityCurve, MetricsReport, Signal};
use hft_core::execution::{execute_market_order, fillable, ActionGrid, ExecError, LowLevelEnv, FEE_TABLE};
use hft_core::learner::{qteacher_loss, LossConfig, Transition, ValueNet};
use hft_core::marketdata::{
    five_regime_suite, synth_market, FeatureMatrix, Level, LobSnapshot, MacdSpans, MarketSeries, OhlcBar, Regime, RegimeKind, SynthSpec,
    FIVE_REGIME_ORDER,
};
use hft_core::oracle::{build_q_star, teacher_operator_step, QTable, ToyMdp, INFEASIBLE};
use hft_core::pool::{label_minute_bars, sample_indices, AgentPool, PoolAgent, PoolCell, SamplingModel, SegmentConfig, LABEL_NAMES_5};
use hft_core::router::{router_features, run_router, selection_histogram, train_router, AgentBank, HighLevelEnv, RouterConfig, RouterTask, MINUTE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Check = fn() -> Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(start: Instant, limit: Duration) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took <= limit, || format!("took {took:.1?}, budget {limit:?}"))
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

// ---- shared fixtures ----

fn random_book(rng: &mut impl Rng, ts: i64, mid: f64, spread: f64, depth: usize) -> LobSnapshot {
    let (mut b, mut a) = (mid - 0.5 * spread, mid + 0.5 * spread);
    let mut bids = Vec::with_capacity(depth);
    let mut asks = Vec::with_capacity(depth);
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

fn random_lobs(seed: u64, n: usize, spread: f64) -> Vec<LobSnapshot> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mid = 100.0;
    (0..n)
        .map(|i| {
            if i > 0 {
                mid += rng.random_range(-1.0..1.0);
            }
            random_book(&mut rng, i as i64, mid, spread, 3)
        })
        .collect()
}

// ---- 1 ----

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

fn c1_dp_oracle() -> Result<String, String> {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=6);
        let k = rng.random_range(2..=3);
        let fee = if seed % 2 == 0 { 0.0 } else { FEE_TABLE };
        let spread = if seed % 4 < 2 { 0.0 } else { 0.01 };
        let lobs = random_lobs(seed, n, spread);
        let grid = ActionGrid::new(rng.random_range(0.5..4.0), k).unwrap();
        let q = build_q_star(&lobs, grid, fee).map_err(|e| e.to_string())?;
        let (got, want) = (q.best(0, 0), exhaustive_best(&lobs, grid, fee, 0, 0));
        worst = worst.max((got - want).abs() / want.abs().max(1.0));
        ensure(close(got, want, 1e-9), || format!("seed {seed}: {got} vs {want}"))?;
    }
    within_budget(start, Duration::from_secs(10))?;
    Ok(format!("50 instances, worst relative gap {worst:.1e}"))
}

// ---- 2 ----

fn random_q(rng: &mut impl Rng, s: usize, a: usize) -> QTable {
    QTable {
        n_states: s,
        n_actions: a,
        values: (0..s * a).map(|_| rng.random_range(-10.0..10.0)).collect(),
    }
}

fn c2_teacher_operator() -> Result<String, String> {
    let start = Instant::now();
    let mut max_iters = 0;
    let mut pairs = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, a) = (rng.random_range(2..=6), rng.random_range(2..=4));
        let gamma = rng.random_range(0.5..0.95);
        let lambda = [0.2, 0.5, 0.8][seed as usize % 3];
        let mdp = ToyMdp::random(seed, s, a, gamma).map_err(|e| e.to_string())?;
        let qstar = mdp.optimal_q(1e-14);
        let h = |q: &QTable| teacher_operator_step(q, &mdp, lambda, &qstar).unwrap();
        let fixed = h(&qstar).sup_distance(&qstar);
        ensure(fixed < 1e-8, || format!("seed {seed}: fixed-point residual {fixed}"))?;
        for _ in 0..10 {
            let (q1, q2) = (random_q(&mut rng, s, a), random_q(&mut rng, s, a));
            let (d_in, d_out) = (q1.sup_distance(&q2), h(&q1).sup_distance(&h(&q2)));
            ensure(d_out <= d_in + 1e-12, || format!("seed {seed}: expanded {d_in} to {d_out}"))?;
            pairs += 1;
        }
        let mut q = QTable::zeros(s, a);
        let mut iters = 0;
        while q.sup_distance(&qstar) >= 1e-6 {
            q = h(&q);
            iters += 1;
            ensure(iters <= 2000, || format!("seed {seed}: no convergence in 2000 iterations"))?;
        }
        max_iters = max_iters.max(iters);
    }
    within_budget(start, Duration::from_secs(30))?;
    Ok(format!("20 MDPs, {pairs} pairs non-expansive, converged within {max_iters} iterations"))
}

// ---- 3 ----

fn c3_execution() -> Result<String, String> {
    let start = Instant::now();
    let lob = LobSnapshot::new(0, vec![Level::new(99.0, 1.0)], vec![Level::new(100.0, 1.0), Level::new(101.0, 2.0)]).unwrap();
    let f = execute_market_order(&lob, 2.0, 0.0).map_err(|e| e.to_string())?;
    ensure(f.cost == 201.0 && f.vwap == 100.5, || format!("two-level buy cost {} vwap {}", f.cost, f.vwap))?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..1000 {
        let spread = if i % 2 == 0 { 0.0 } else { rng.random_range(0.01..1.0) };
        let fee = [0.0, FEE_TABLE, 0.001][i % 3];
        let lob = random_book(&mut rng, 0, 100.0, spread, 5);
        for buy in [true, false] {
            let cap = fillable(&lob, buy);
            let (x, y): (f64, f64) = (rng.random_range(0.01..1.0), rng.random_range(0.01..1.0));
            let sign = if buy { 1.0 } else { -1.0 };
            let small = execute_market_order(&lob, sign * x.min(y) * cap, fee).unwrap();
            let large = execute_market_order(&lob, sign * x.max(y) * cap, fee).unwrap();
            // same-level fills agree only up to rounding
            let monotone = if buy { small.vwap <= large.vwap + 1e-12 } else { small.vwap + 1e-12 >= large.vwap };
            ensure(monotone, || format!("book {i}: vwap not monotone buy={buy} {} vs {} sizes {} {}", small.vwap, large.vwap, x.min(y) * cap, x.max(y) * cap))?;
        }
        let size = rng.random_range(0.01..1.0) * fillable(&lob, true).min(fillable(&lob, false));
        let pnl = -(execute_market_order(&lob, size, fee).unwrap().cost + execute_market_order(&lob, -size, fee).unwrap().cost);
        let costly = spread > 0.0 || fee > 0.0;
        ensure(if costly { pnl < 0.0 } else { pnl <= 0.0 }, || format!("book {i}: round trip made {pnl}"))?;
    }
    within_budget(start, Duration::from_secs(5))?;
    Ok("201 example exact, 1000 books monotone and round trips unprofitable".into())
}

// ---- 4 ----

fn c4_telescoping() -> Result<String, String> {
    let grid = ActionGrid::new(1.0, 5).unwrap();
    let mut worst = 0.0f64;
    for s in 0..10u64 {
        let kind = FIVE_REGIME_ORDER[s as usize % 5];
        let spec = SynthSpec::new(s, vec![Regime::preset(kind, 400), Regime::preset(RegimeKind::Sideways, 200)]);
        let series = synth_market(&spec).map_err(|e| e.to_string())?;
        for p in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(p * 1000 + s);
            let fee = if p % 2 == 0 { 0.0 } else { FEE_TABLE };
            let mut env = LowLevelEnv::new(&series, grid, fee, 0, series.len(), rng.random_range(0..5), 1000.0).map_err(|e| e.to_string())?;
            let v0 = env.net_value();
            let mut total = 0.0;
            while !env.done() {
                total += env.step(rng.random_range(0..5)).map_err(|e| e.to_string())?.reward;
            }
            let dv = env.net_value() - v0;
            worst = worst.max((total - dv).abs() / dv.abs().max(1.0));
            ensure(close(total, dv, 1e-9), || format!("series {s} policy {p}: {total} vs {dv}"))?;
        }
    }
    Ok(format!("200 episodes, worst relative gap {worst:.1e}"))
}

// ---- 5 ----

fn c5_teacher_efficiency() -> Result<String, String> {
    let start = Instant::now();
    let seeds: Vec<u64> = (0..5).collect();
    let rows = run_ablation(&Variant::ALL, &seeds).map_err(|e| format!("{e:#}"))?;
    eprintln!("    variant       seed  CS      RS        AHL");
    for r in &rows {
        eprintln!(
            "    {:<13} {:<5} {:<7} {:<9.5} {:.1}",
            r.variant,
            r.seed,
            r.cs.map_or("never".into(), |c| c.to_string()),
            r.rs,
            r.ahl
        );
    }
    let (cs_van, cs_os) = (median_cs(&rows, Variant::Vanilla), median_cs(&rows, Variant::Os));
    let (rs_van, rs_both) = (median_rs(&rows, Variant::Vanilla), median_rs(&rows, Variant::OsOa));
    within_budget(start, Duration::from_secs(600))?;
    let summary = format!(
        "median steps to {:.0}% optimal: OS {cs_os} vs vanilla {cs_van}; median final reward OS+OA {rs_both:.4} vs vanilla {rs_van:.4}",
        CONVERGED * 100.0
    );
    ensure(cs_os <= 0.5 * cs_van && rs_both >= rs_van, || summary.clone())?;
    Ok(summary)
}

// ---- 6 ----

fn c6_gradients() -> Result<String, String> {
    let rows: Vec<Vec<f64>> = (0..4).map(|i| (0..3).map(|j| ((i * 3 + j) as f64 * 0.37).sin()).collect()).collect();
    let features = FeatureMatrix::from_rows("grad", 3, &rows);
    let obs = |t, p| hft_core::execution::Observation { t, position_index: p };
    let (mut worst, mut checked, mut kinks) = (0.0f64, 0usize, 0usize);
    for seed in 0..3u64 {
        let sizes = [4, 6, 5, 3];
        let online = ValueNet::new(&sizes, seed).map_err(|e| e.to_string())?;
        let target = ValueNet::new(&sizes, seed + 100).map_err(|e| e.to_string())?;
        let ts = [
            Transition {
                state: obs(0, 1),
                action: 2,
                reward: 0.3,
                next_state: obs(1, 2),
                done: false,
                qstar_row: Some(vec![0.1, INFEASIBLE, 0.4]),
            },
            Transition {
                state: obs(2, 0),
                action: 0,
                reward: -0.2,
                next_state: obs(3, 0),
                done: true,
                qstar_row: Some(vec![1.0, 0.0, -1.0]),
            },
            Transition {
                state: obs(1, 2),
                action: 1,
                reward: 0.05,
                next_state: obs(2, 1),
                done: false,
                qstar_row: Some(vec![0.2, 0.3, 0.25]),
            },
        ];
        let batch: Vec<&Transition> = ts.iter().collect();
        let cfg = LossConfig {
            gamma: 0.95,
            alpha: 0.7,
            temperature: 0.5,
        };
        let out = qteacher_loss(&online, &target, &features, 3, &batch, &cfg).map_err(|e| e.to_string())?;
        ensure(out.td > 0.0 && out.kl > 0.0, || "both loss terms must be active".into())?;
        let h = 1e-6;
        for i in 0..online.params().len() {
            let mut p = online.clone();
            p.params_mut()[i] += h;
            let mut m = online.clone();
            m.params_mut()[i] -= h;
            let lp = qteacher_loss(&p, &target, &features, 3, &batch, &cfg).unwrap().loss;
            let lm = qteacher_loss(&m, &target, &features, 3, &batch, &cfg).unwrap().loss;
            let fd = (lp - lm) / (2.0 * h);
            let (up, down) = ((lp - out.loss) / h, (out.loss - lm) / h);
            // the bootstrap argmax or a ReLU switches inside [-h, h]: no derivative to compare
            if (up - down).abs() > 1e-3 * up.abs().max(down.abs()).max(1e-3) {
                kinks += 1;
                continue;
            }
            let g = out.grads[i];
            // the relative test is meaningless for gradients that vanish in both
            if fd.abs().max(g.abs()) < 1e-8 {
                continue;
            }
            let rel = (fd - g).abs() / fd.abs().max(g.abs());
            worst = worst.max(rel);
            checked += 1;
            ensure(rel <= 1e-4, || format!("seed {seed} param {i}: analytic {g} vs numeric {fd}"))?;
        }
    }
    ensure(kinks * 10 <= checked, || format!("{kinks} parameters sit on kinks, only {checked} checked"))?;
    Ok(format!("3 nets, {checked} parameters within {worst:.1e} relative, {kinks} skipped at kinks"))
}

// ---- 7 ----

fn c7_segmentation() -> Result<String, String> {
    let start = Instant::now();
    let want: Vec<usize> = FIVE_REGIME_ORDER
        .iter()
        .map(|k| match k {
            RegimeKind::Bear => 1,
            RegimeKind::Pullback => 2,
            RegimeKind::Sideways => 3,
            RegimeKind::Rally => 4,
            RegimeKind::Bull => 5,
        })
        .collect();
    let cfg = SegmentConfig::default();
    let series = synth_market(&five_regime_suite(0, 7200)).map_err(|e| e.to_string())?;
    let spans = label_minute_bars(&series.minute_bars, &cfg).map_err(|e| e.to_string())?;
    let got: Vec<usize> = spans.iter().map(|s| s.label).collect();
    ensure(got == want, || format!("labels {got:?}, generating order {want:?}"))?;
    let flat = synth_market(&SynthSpec::new(0, vec![Regime::new(RegimeKind::Sideways, 7200, 0.0, 0.0)])).map_err(|e| e.to_string())?;
    let f = label_minute_bars(&flat.minute_bars, &cfg).map_err(|e| e.to_string())?;
    ensure(f.len() == 1 && f[0].label_name == "sideways", || format!("flat series gave {f:?}"))?;
    within_budget(start, Duration::from_secs(5))?;
    Ok(format!("labels {got:?}; flat series one sideways segment"))
}

// ---- 8 ----

fn c8_sampling() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let returns: Vec<f64> = (0..100).map(|_| Normal::new(0.0, 0.02).unwrap().sample(&mut rng)).collect();
    let model = SamplingModel::fit(&returns, 0.1).map_err(|e| e.to_string())?;
    let (lo, hi, n) = (-0.3, 0.3, 60_000);
    let dx = (hi - lo) / n as f64;
    let mass: f64 = (0..n).map(|i| model.pdf(lo + (i as f64 + 0.5) * dx) * dx).sum();
    ensure((mass - 1.0).abs() <= 1e-3, || format!("KDE mass {mass}"))?;

    let draws = sample_indices(&[1.0 / 4.0, 3.0 / 4.0], &mut rng, 10_000).map_err(|e| e.to_string())?;
    let ones = draws.iter().filter(|&&i| i == 1).count() as f64;
    let ratio = ones / (draws.len() as f64 - ones);
    ensure((ratio / 3.0 - 1.0).abs() <= 0.05, || format!("1:3 priorities sampled at 1:{ratio:.3}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bimodal: Vec<f64> = (0..200)
        .map(|i| Normal::new(if i % 2 == 0 { 0.05 } else { -0.05 }, 0.01).unwrap().sample(&mut rng))
        .collect();
    let mut sorted = bimodal.clone();
    sorted.sort_by(f64::total_cmp);
    let top = sorted[180];
    let model = SamplingModel::fit(&bimodal, 0.1).map_err(|e| e.to_string())?;
    let draws = sample_indices(&model.distribution(&bimodal, 100.0).unwrap(), &mut rng, 10_000).map_err(|e| e.to_string())?;
    let share = draws.iter().filter(|&&i| bimodal[i] >= top).count() as f64 / 1e4;
    ensure(share > 0.9, || format!("beta=100 put {share:.3} of draws on the top decile"))?;
    Ok(format!("KDE mass {mass:.5}; 1:{ratio:.3} ratio; top-decile share {share:.3}"))
}

// ---- 9 ----

fn constant_pool(grid: ActionGrid, ids: &[&str]) -> (AgentPool, AgentBank) {
    let mut cells = Vec::new();
    for (l, id) in ids.iter().enumerate() {
        for p in 0..grid.n_actions {
            cells.push(PoolCell {
                label: l + 1,
                position_index: p,
                agent_checkpoint: id.to_string(),
                mean_return: 0.0,
                return_variance: 0.0,
                n_segments: 1,
            });
        }
    }
    let mut bank = AgentBank::new();
    bank.insert("flat".into(), PoolAgent::Constant(0));
    bank.insert("half".into(), PoolAgent::Constant(grid.n_actions / 2));
    bank.insert("long".into(), PoolAgent::Constant(grid.n_actions - 1));
    let labels = LABEL_NAMES_5.iter().take(ids.len()).map(|s| s.to_string()).collect();
    (AgentPool { grid, labels, cells }, bank)
}

fn standardized_router_features(fit_on: &MarketSeries, series: &MarketSeries) -> FeatureMatrix {
    let st = hft_core::learner::Standardizer::fit(&FeatureMatrix::high_level(&fit_on.minute_bars));
    let mut high = FeatureMatrix::high_level(&series.minute_bars);
    st.apply(&mut high).unwrap();
    router_features(&high)
}

fn c9_hierarchy() -> Result<String, String> {
    let grid = ActionGrid::new(1.0, 3).unwrap();
    // step ratio and reward identity under random label choices
    let (pool, bank) = constant_pool(grid, &["flat", "half", "long"]);
    for seed in 0..5u64 {
        let series = synth_market(&SynthSpec::new(seed, vec![Regime::preset(RegimeKind::Rally, 3600 + 17 * seed as usize)])).unwrap();
        let feats = standardized_router_features(&series, &series);
        let mut env = HighLevelEnv::new(&series, &feats, &pool, &bank, FEE_TABLE, 0..series.len(), 0, 500.0).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v0 = env.net_value();
        let (mut total, mut lows, mut steps) = (0.0, 0, Vec::new());
        while !env.done() {
            let s = env.step(rng.random_range(1..=3)).map_err(|e| e.to_string())?;
            total += s.reward;
            lows += s.low_steps;
            steps.push(s);
        }
        let (last, full) = steps.split_last().unwrap();
        ensure(full.iter().all(|s| s.low_steps == MINUTE) && last.low_steps <= MINUTE, || format!("seed {seed}: step ratio broken"))?;
        ensure(lows == series.len() - 1, || format!("seed {seed}: {lows} low steps"))?;
        let dv = env.net_value() - v0;
        ensure(close(total, dv, 1e-9), || format!("seed {seed}: reward sum {total} vs value change {dv}"))?;
    }

    // a steady bull market where only label 4 holds a long position
    let (pool, bank) = constant_pool(grid, &["flat", "flat", "half", "long", "flat"]);
    let mut shares = Vec::new();
    for seed in 0..5u64 {
        let train = synth_market(&SynthSpec::new(100 + seed, vec![Regime::preset(RegimeKind::Bull, 24 * 3600)])).unwrap();
        let held_out = synth_market(&SynthSpec::new(200 + seed, vec![Regime::preset(RegimeKind::Bull, 8 * 3600)])).unwrap();
        let f_train = standardized_router_features(&train, &train);
        let f_test = standardized_router_features(&train, &held_out);
        let task = RouterTask {
            series: &train,
            features: &f_train,
            pool: &pool,
            bank: &bank,
            fee_rate: FEE_TABLE,
        };
        let cfg = RouterConfig {
            episodes: 800,
            hidden: vec![16, 16],
            gamma: 0.5,
            batch_size: 64,
            update_ratio: 8.0,
            seed,
            ..RouterConfig::default()
        };
        let (router, _) = train_router(&task, &cfg).map_err(|e| e.to_string())?;
        let mut env = HighLevelEnv::new(&held_out, &f_test, &pool, &bank, FEE_TABLE, 0..held_out.len(), 0, 0.0).map_err(|e| e.to_string())?;
        let steps = run_router(&router, &mut env).map_err(|e| e.to_string())?;
        shares.push(selection_histogram(&steps, 5)[3]);
    }
    let passed = shares.iter().filter(|&&s| s > 0.9).count();
    let summary = format!(
        "60:1 ratio and reward identity hold; dominant-label share per seed {:?}, {passed}/5 above 0.9",
        shares.iter().map(|s| (s * 1000.0).round() / 1000.0).collect::<Vec<_>>()
    );
    ensure(passed >= 4, || summary.clone())?;
    Ok(summary)
}

// ---- 10 ----

fn metrics(values: Vec<f64>) -> MetricsReport {
    compute_metrics(&EquityCurve::from_values(values)).unwrap()
}

fn ramp(n: usize, drift: f64) -> MarketSeries {
    synth_market(&SynthSpec::new(0, vec![Regime::new(RegimeKind::Bull, n, drift, 0.0)])).unwrap()
}

fn c10_metrics() -> Result<String, String> {
    let c = metrics(vec![250.0; 50]);
    ensure(
        (c.tr, c.avol, c.mdd, c.asr, c.acr, c.asor) == (0.0, 0.0, 0.0, 0.0, 0.0, 0.0) && c.asr_undefined && c.acr_undefined && c.asor_undefined,
        || format!("constant curve gave {c:?}"),
    )?;
    let h = metrics(vec![100.0, 110.0, 99.0]);
    ensure(h.mdd == 0.1 && h.tr == -0.01, || format!("[100, 110, 99] gave mdd {} tr {}", h.mdd, h.tr))?;
    let values = vec![100.0, 103.0, 101.5, 99.0, 104.0, 102.0, 108.0];
    let base = metrics(values.clone());
    for k in [-3, 1, 7] {
        let scaled = metrics(values.iter().map(|v| v * 2f64.powi(k)).collect());
        ensure(scaled == base, || format!("scaling by 2^{k} changed the metrics"))?;
    }
    let grid = ActionGrid::new(1.0, 3).unwrap();
    let flat = macd_strategy(&ramp(200, 0.0), MacdSpans::default(), 0.0, grid).map_err(|e| e.to_string())?;
    ensure(flat.signals.iter().all(|&s| s == Signal::Hold), || "MACD traded a constant price".into())?;
    let up = macd_strategy(&ramp(200, 1e-4), MacdSpans::default(), 0.0, grid).map_err(|e| e.to_string())?;
    ensure(up.signals[1] == Signal::Buy && !up.signals.contains(&Signal::Sell), || "MACD on a ramp up".into())?;
    let down = macd_strategy(&ramp(200, -1e-4), MacdSpans::default(), 0.0, grid).map_err(|e| e.to_string())?;
    ensure(down.signals[1] == Signal::Sell && !down.signals.contains(&Signal::Buy), || "MACD on a ramp down".into())?;
    let book = |ts, bq, aq| LobSnapshot::new(ts, vec![Level::new(99.99, bq)], vec![Level::new(100.01, aq)]).unwrap();
    let s = MarketSeries::new(
        "IV",
        vec![book(0, 1.0, 1.0), book(1, 9.0, 1.0), book(2, 1.0, 9.0)],
        (0..3).map(|t| OhlcBar::flat(t, 100.0)).collect(),
    )
    .unwrap();
    let iv = iv_strategy(&s, 1, 0.5, -0.5, grid).map_err(|e| e.to_string())?;
    ensure(iv.signals == vec![Signal::Hold, Signal::Buy, Signal::Sell], || format!("IV branches {:?}", iv.signals))?;
    let balanced = iv_strategy(&ramp(100, 0.0), 5, 0.2, -0.2, grid).map_err(|e| e.to_string())?;
    ensure(balanced.signals.iter().all(|&s| s == Signal::Hold), || "IV traded a balanced book".into())?;
    Ok("constant zeros, [100,110,99] MDD 0.1, exact 2^k scaling, MACD and IV branches".into())
}

// ---- 11 ----

fn files_under(dir: &Path, pred: impl Fn(&str) -> bool) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for stage in std::fs::read_dir(dir).unwrap().flatten() {
        if !stage.path().is_dir() {
            continue;
        }
        for f in std::fs::read_dir(stage.path()).unwrap().flatten() {
            if pred(&f.file_name().to_string_lossy()) {
                out.push(f.path());
            }
        }
    }
    out.sort();
    out
}

fn c11_pipeline_determinism() -> Result<String, String> {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs: Vec<_> = ["a", "b"].iter().map(|r| dir.path().join(r)).collect();
    for out in &runs {
        let o = Command::new(env!("CARGO_BIN_EXE_hft"))
            .args(["run", "--preset", "desk", "--out"])
            .arg(out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
    }
    let pick = |name: &str| name == "manifest.json" || name.starts_with("equity_");
    let (a, b) = (files_under(&runs[0], pick), files_under(&runs[1], pick));
    ensure(a.len() == b.len() && a.len() > 6, || format!("{} vs {} artifacts", a.len(), b.len()))?;
    for (x, y) in a.iter().zip(&b) {
        ensure(std::fs::read(x).unwrap() == std::fs::read(y).unwrap(), || format!("{} differs between runs", x.display()))?;
    }
    let table = std::fs::read_to_string(runs[0].join("backtest/comparison.csv")).map_err(|e| e.to_string())?;
    let header = table.lines().next().unwrap_or_default();
    ensure(header.starts_with("policy,TR,ASR,ACR,ASoR,AVOL,MDD"), || format!("comparison header {header}"))?;
    for policy in ["router", "buy_and_hold", "flat", "macd", "iv"] {
        ensure(table.lines().any(|l| l.starts_with(&format!("{policy},"))), || format!("no {policy} row"))?;
    }
    within_budget(start, Duration::from_secs(30 * 60))?;
    Ok(format!(
        "two desk runs, {} manifests and equity curves identical, {:.0?} total",
        a.len(),
        start.elapsed()
    ))
}

fn main() {
    let checks: [(u32, &str, Check); 11] = [
        (1, "DP oracle equals exhaustive search", c1_dp_oracle),
        (2, "teacher operator fixed point and non-expansion", c2_teacher_operator),
        (3, "execution model", c3_execution),
        (4, "reward telescoping", c4_telescoping),
        (5, "teacher efficiency on the rising toy", c5_teacher_efficiency),
        (6, "loss gradients", c6_gradients),
        (7, "segmentation end to end", c7_segmentation),
        (8, "sampling law", c8_sampling),
        (9, "hierarchy consistency and router dominance", c9_hierarchy),
        (10, "metric identities and rule strategies", c10_metrics),
        (11, "pipeline determinism", c11_pipeline_determinism),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (n, name, check) in checks {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                println!("criterion {n:>2} FAIL  {name}: {detail} [{secs:.1}s]");
                failed.push(n);
            }
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
