//! Trajectory-based meta-learning for temporal recommendation.
//!
//! A recommender made of an embedding table, graph propagation and
//! self-attention is instantiated twice. The GTL branch restarts from its
//! meta-initialization at every time slice; the OTL branch carries its
//! parameters forward through time. Scores of both branches are summed.

pub mod autodiff;
pub mod data;
pub mod eval;
pub mod meta;
pub mod model;

pub use autodiff::{AutodiffError, Tape, Tensor, Var};
pub use data::{DataError, InteractionLog, TimeSlicedDataset};
pub use eval::{EvalError, EvalReport};
pub use meta::{MetaError, TrainConfig};
pub use model::{ModelConfig, ModelError, ParameterSet, Recommender};
pub mod experiment;
pub mod synthetic;

/// Any failure surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Meta(#[from] MetaError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl Error {
    /// True when the failure came from non-finite arithmetic.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Autodiff(AutodiffError::NonFinite { .. }) => true,
            Error::Model(
                ModelError::Autodiff(AutodiffError::NonFinite { .. }) | ModelError::NonFinite(_),
            ) => true,
            Error::Meta(m) => m.is_numerical(),
            _ => false,
        }
    }

    /// True when the failure came from the input data.
    pub fn is_data(&self) -> bool {
        matches!(
            self,
            Error::Data(_)
                | Error::Model(ModelError::Data(_))
                | Error::Meta(MetaError::Data(_) | MetaError::NoSlices)
        ) || matches!(self, Error::Eval(EvalError::EmptyTestSet))
    }
}
