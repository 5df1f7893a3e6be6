//! Comparison tables over backtested policies.

use hft_core::backtest::MetricsReport;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub policy: String,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

pub const COMPARISON_HEADER: [&str; 9] = ["policy", "TR", "ASR", "ACR", "ASoR", "AVOL", "MDD", "trades", "AHL"];

fn cells(row: &ComparisonRow) -> Vec<String> {
    let m = &row.metrics;
    let ratio = |v: f64, undefined: bool| if undefined { "n/a".to_string() } else { format!("{v:.4}") };
    vec![
        row.policy.clone(),
        format!("{:.6}", m.tr),
        ratio(m.asr, m.asr_undefined),
        ratio(m.acr, m.acr_undefined),
        ratio(m.asor, m.asor_undefined),
        format!("{:.6}", m.avol),
        format!("{:.6}", m.mdd),
        m.trade_count.to_string(),
        format!("{:.1}", m.ahl),
    ]
}

pub fn write_comparison_csv(rows: &[ComparisonRow], w: impl std::io::Write) -> anyhow::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(COMPARISON_HEADER)?;
    for row in rows {
        wtr.write_record(cells(row))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn markdown_table(rows: &[ComparisonRow]) -> String {
    let mut out = format!("| {} |\n", COMPARISON_HEADER.join(" | "));
    out += &format!("|{}\n", "---|".repeat(COMPARISON_HEADER.len()));
    for row in rows {
        out += &format!("| {} |\n", cells(row).join(" | "));
    }
    out
}
