//! Sampled-negative ranking metrics and training diagnostics.

mod diagnostics;
mod metrics;

pub use self::diagnostics::{
    embedding_shift, normalized_shift, path_length, popularity_groups, shift_series, GroupShift,
    PopularityGroup, PopularityGroups, ShiftRow,
};
pub use self::metrics::{
    evaluate, rank_metrics, sample_negatives, EvalConfig, EvalReport, RankOutcome, Scorer,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("ranking needs at least one negative")]
    NoNegatives,
    #[error("no interactions to evaluate")]
    EmptyTestSet,
}
