//! The two-branch neural recommender: parameters, forward pass, BPR loss,
//! checkpoints and a static MF baseline.

mod baseline;
mod checkpoint;
mod loss;
mod params;
mod recommender;

pub use self::baseline::{MatrixFactorization, MfConfig};
pub use self::checkpoint::{
    BranchHeader, Checkpoint, CheckpointHeader, TensorHeader, CHECKPOINT_VERSION,
};
pub use self::loss::{bpr_loss, joint_bpr_loss, BprForm, JointLoss};
pub use self::params::{BoundParams, BranchShape, ParamEntry, ParamLayout, ParameterSet};
pub(crate) use self::recommender::mix_seed;
pub use self::recommender::{
    branch_triple_scores, gnn_forward, sa_forward, score, AttentionNorm, BranchEmbeddings,
    ForwardInputs, Mode, ModelConfig, Recommender,
};

use crate::autodiff::AutodiffError;
use crate::data::DataError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("graph has {graph_nodes} nodes but the model expects {model_nodes}")]
    GraphMismatch {
        graph_nodes: usize,
        model_nodes: usize,
    },
    #[error("dimension mismatch in {what}: checkpoint has {checkpoint}, data has {data}")]
    DimMismatch {
        what: String,
        checkpoint: String,
        data: String,
    },
    #[error("empty batch")]
    EmptyBatch,
    #[error("both branches have dimension 0")]
    NoBranches,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
