//! Outer/inner training loop: GTL resets to its meta-initialization every
//! slice, OTL carries its parameters from slice to slice, and both
//! meta-initializations move along accumulated gradient-path increments.

mod config;
mod objective;
mod optimizer;
mod train;
mod trajectory;

pub use self::config::{MetaMode, MetaOptimizer, TrainConfig};
pub use self::objective::{branch_shape, RecBatch, RecommenderObjective};
pub use self::optimizer::{meta_update, AdamState};
pub use self::train::{
    inner_step, run_slice, train, Branch, EpochTrace, LossRecord, MetaObjective, MetaState,
    PathRecord, SliceRun, SliceSnapshot, TrainOutput, Validator,
};
pub use self::trajectory::{fomaml_accumulate, leap_accumulate, TrajectoryRecord, TrajectoryStep};

use crate::data::DataError;
use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum MetaError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset has no training slices")]
    NoSlices,
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("trajectory vectors have length {found}, accumulator has {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("non-finite loss {value} in slice {slice}")]
    NonFiniteLoss { slice: usize, value: f64 },
    #[error("meta-parameters became non-finite after epoch {epoch}")]
    NonFiniteMeta { epoch: usize },
    #[error("slice {slice}: {source}")]
    Model {
        slice: usize,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("validation: {0}")]
    Validation(String),
}

impl MetaError {
    /// True for failures caused by non-finite arithmetic.
    pub fn is_numerical(&self) -> bool {
        match self {
            MetaError::NonFiniteLoss { .. } | MetaError::NonFiniteMeta { .. } => true,
            MetaError::Model { source, .. } => matches!(
                source,
                ModelError::Autodiff(crate::autodiff::AutodiffError::NonFinite { .. })
                    | ModelError::NonFinite(_)
            ),
            _ => false,
        }
    }
}
