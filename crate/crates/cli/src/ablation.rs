//! Teacher ablation on a deterministic rising toy chunk: plain double DQN against the
//! optimal-value supervisor (OS), the optimal actor (OA), and both.

use anyhow::Context;
use hft_core::execution::ActionGrid;
use hft_core::learner::{steps_to_threshold, train_low_level, CyclicChunks, LowLevelTask, Standardizer, TrainConfig};
use hft_core::marketdata::{synth_market, FeatureMatrix, MarketSeries, Regime, RegimeKind, SynthSpec};
use serde::Serialize;

/// Seconds in the toy chunk.
pub const TOY_LEN: usize = 300;
/// Share of the optimal reward that counts as converged.
pub const CONVERGED: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Variant {
    Vanilla,
    Os,
    Oa,
    OsOa,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Vanilla, Variant::Os, Variant::Oa, Variant::OsOa];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Vanilla => "DDQN",
            Variant::Os => "DDQN+OS",
            Variant::Oa => "DDQN+OA",
            Variant::OsOa => "DDQN+OS+OA",
        }
    }

    pub fn apply(self, cfg: TrainConfig) -> TrainConfig {
        let teacher = cfg.alpha0;
        let base = cfg.vanilla();
        match self {
            Variant::Vanilla => base,
            Variant::Os => TrainConfig { alpha0: teacher, ..base },
            Variant::Oa => TrainConfig { optimal_actor: true, ..base },
            Variant::OsOa => TrainConfig {
                alpha0: teacher,
                optimal_actor: true,
                ..base
            },
        }
    }
}

/// A cost-free market rising by a constant fraction every second, with standardized features.
pub fn rising_toy() -> anyhow::Result<(MarketSeries, FeatureMatrix)> {
    let spec = SynthSpec::new(0, vec![Regime::new(RegimeKind::Bull, TOY_LEN, (1.0f64 + 2e-5).ln(), 0.0)]).with_spread_ticks(0);
    let series = synth_market(&spec)?;
    let mut feats = FeatureMatrix::low_level(&series);
    Standardizer::fit(&feats).apply(&mut feats)?;
    Ok((series, feats))
}

/// Small learner sized for the toy. The teacher temperature matches the per-second
/// reward scale of a unit position at a price near 100.
pub fn toy_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 50,
        chunks_per_epoch: 1,
        hidden: vec![32, 32],
        batch_size: 64,
        update_ratio: 32.0,
        temperature: 0.01,
        seed,
        ..TrainConfig::default()
    }
}

/// One training run. `cs` is the environment-step count at which the greedy reward first
/// reached [`CONVERGED`] of optimal; `rs` and `ahl` come from the last epoch.
#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: &'static str,
    pub seed: u64,
    pub cs: Option<usize>,
    pub rs: f64,
    pub ahl: f64,
    pub optimal: f64,
}

pub fn run_ablation(variants: &[Variant], seeds: &[u64]) -> anyhow::Result<Vec<AblationRow>> {
    let (series, feats) = rising_toy()?;
    let task = LowLevelTask::new(&series, &feats, ActionGrid::new(1.0, 2)?, 0.0)?;
    let optimal = task.q_star(0..TOY_LEN)?.best(0, 0);
    let mut rows = Vec::new();
    for &variant in variants {
        for &seed in seeds {
            let cfg = variant.apply(toy_config(seed));
            let mut chunks = CyclicChunks::new(vec![0..TOY_LEN])?;
            let out = train_low_level(&task, &mut chunks, &cfg, None).with_context(|| format!("{} seed {seed}", variant.name()))?;
            let last = out.log.last().context("no epochs")?;
            rows.push(AblationRow {
                variant: variant.name(),
                seed,
                cs: steps_to_threshold(&out.log, CONVERGED * optimal),
                rs: last.eval_reward,
                ahl: last.ahl,
                optimal,
            });
        }
    }
    Ok(rows)
}

/// Median of `xs`; never-converged runs count as infinitely slow.
pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

pub fn median_cs(rows: &[AblationRow], variant: Variant) -> f64 {
    let mut xs: Vec<f64> = rows
        .iter()
        .filter(|r| r.variant == variant.name())
        .map(|r| r.cs.map_or(f64::INFINITY, |s| s as f64))
        .collect();
    median(&mut xs)
}

pub fn median_rs(rows: &[AblationRow], variant: Variant) -> f64 {
    let mut xs: Vec<f64> = rows.iter().filter(|r| r.variant == variant.name()).map(|r| r.rs).collect();
    median(&mut xs)
}

pub fn write_ablation_csv(rows: &[AblationRow], w: impl std::io::Write) -> anyhow::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["variant", "seed", "CS", "RS", "AHL", "optimal"])?;
    for r in rows {
        wtr.write_record([
            r.variant.to_string(),
            r.seed.to_string(),
            r.cs.map_or("never".into(), |s| s.to_string()),
            r.rs.to_string(),
            r.ahl.to_string(),
            r.optimal.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
