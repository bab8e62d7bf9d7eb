//! Interaction ingest, temporal slicing, graph construction, user histories
//! and BPR sampling.

mod graph;
mod interaction_log;
mod sampling;
mod sequences;
mod slicing;
pub mod time;

pub use self::graph::{build_graph, InteractionGraph};
pub use self::interaction_log::{ingest, IngestOptions, Interaction, InteractionLog};
pub use self::sampling::{
    sample_bpr_batch, BprBatch, BprTriple, ObservedItems, NEGATIVE_RETRY_CAP,
};
pub use self::sequences::{sequences_from_log, user_sequences, UserSequence};
pub use self::slicing::{slice_by_time, TimeSlice, TimeSlicedDataset};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("no interactions found")]
    Empty,
    #[error("interaction ({user}, {item}) references an index out of range")]
    IndexOutOfRange { user: usize, item: usize },
    #[error("no training interactions before cut time {cut_time}")]
    NoTrainingData { cut_time: i64 },
    #[error("granularity must be at least one month")]
    InvalidGranularity,
    #[error("cannot sample from an empty slice")]
    EmptySlice,
    #[error("negative sampling needs at least 2 items, found {0}")]
    TooFewItems(usize),
    #[error("unrecognized time {0:?}; use YYYY-MM, YYYY-MM-DD or unix seconds")]
    InvalidTime(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
