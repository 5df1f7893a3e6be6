//! Training-chunk sampling by preference, trend segmentation and labeling, and
//! selection of the (label x initial position) agent pool.

mod sampling;
mod segment;
mod select;

pub use sampling::{
    bandwidth_search, chunk_dataset, kde_pdf, loo_log_likelihood, normalize_log_weights, quantile, sample_chunks, sample_indices,
    silverman_base, Chunk, PrioritySampler, SamplingModel,
};
pub use segment::{
    band_label, dtw_distance, label_minute_bars, label_name, merge_similar, moving_average, read_labels, resample, segment_and_label,
    split_at_extrema, turning_points, write_labels, LabeledSpan, Segment, SegmentConfig, LABEL_CSV_HEADER, LABEL_NAMES_5,
};
pub use select::{build_agent_pool, rollout_return, spans_to_segments, AgentPool, Candidate, EvalSegment, PoolAgent, PoolCell, FLAT_ID};

use crate::execution::ExecError;

/// Default preference roster for training agents.
pub const DEFAULT_BETAS: [f64; 4] = [-90.0, -10.0, 30.0, 100.0];

#[derive(Debug, thiserror::Error)]
pub enum PoolError {
    #[error("degenerate sample: all values identical")]
    DegenerateSample,
    #[error("zero density at r = {0} inside the quantile band")]
    ZeroDensity(f64),
    #[error("label {0} has no segments")]
    EmptyLabel(usize),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
}
