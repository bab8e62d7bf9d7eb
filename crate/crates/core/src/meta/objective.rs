use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::data::{
    build_graph, sample_bpr_batch, user_sequences, BprTriple, InteractionGraph, ObservedItems,
    TimeSlicedDataset, UserSequence,
};
use crate::model::{
    joint_bpr_loss, BprForm, BranchShape, ForwardInputs, JointLoss, Mode, ModelConfig, ParameterSet,
};

use super::train::{step_seed, MetaObjective};
use super::{MetaError, TrainConfig};

struct SliceData {
    positives: Vec<(usize, usize)>,
    sequences: Vec<UserSequence>,
}

/// BPR training tasks of the two-branch recommender, one per time slice.
///
/// One interaction graph over the whole training horizon is shared by all
/// slices; user histories for slice `t` stop at the slice start.
pub struct RecommenderObjective {
    gtl: ParameterSet,
    otl: ParameterSet,
    graph: Arc<InteractionGraph>,
    observed: ObservedItems,
    slices: Vec<SliceData>,
    num_items: usize,
    batch_size: usize,
    bpr: BprForm,
    model: ModelConfig,
}

/// Triples plus the dropout seed used for every evaluation on them.
#[derive(Clone, Debug)]
pub struct RecBatch {
    pub triples: Vec<BprTriple>,
    pub seed: u64,
}

impl RecommenderObjective {
    pub fn new(dataset: &TimeSlicedDataset, config: &TrainConfig) -> Result<Self, MetaError> {
        let train_pairs = dataset.train_pairs();
        let graph = Arc::new(build_graph(
            dataset.num_users(),
            dataset.num_items(),
            train_pairs.iter().copied(),
        )?);
        Self::with_graph(dataset, config, graph)
    }

    pub fn with_graph(
        dataset: &TimeSlicedDataset,
        config: &TrainConfig,
        graph: Arc<InteractionGraph>,
    ) -> Result<Self, MetaError> {
        let (u, i) = (dataset.num_users(), dataset.num_items());
        let observed = ObservedItems::from_pairs(u, dataset.train_pairs());
        let slices = dataset
            .slices()
            .iter()
            .map(|s| SliceData {
                positives: s.pairs.clone(),
                sequences: user_sequences(dataset, s.start, config.model.max_seq_len),
            })
            .collect();
        Ok(RecommenderObjective {
            gtl: ParameterSet::zeros(branch_shape(u, i, config.gtl_dim, &config.model)),
            otl: ParameterSet::zeros(branch_shape(u, i, config.otl_dim, &config.model)),
            graph,
            observed,
            slices,
            num_items: i,
            batch_size: config.batch_size,
            bpr: config.bpr,
            model: config.model.clone(),
        })
    }

    pub fn graph(&self) -> &Arc<InteractionGraph> {
        &self.graph
    }

    pub fn gtl_shape(&self) -> BranchShape {
        self.gtl.shape()
    }

    pub fn otl_shape(&self) -> BranchShape {
        self.otl.shape()
    }

    pub fn slice_sequences(&self, slice: usize) -> &[UserSequence] {
        &self.slices[slice].sequences
    }
}

pub fn branch_shape(
    num_users: usize,
    num_items: usize,
    dim: usize,
    model: &ModelConfig,
) -> BranchShape {
    BranchShape {
        num_users,
        num_items,
        dim,
        gnn_layers: model.gnn_layers,
        sa_layers: model.sa_layers,
    }
}

impl MetaObjective for RecommenderObjective {
    type Batch = RecBatch;

    fn num_slices(&self) -> usize {
        self.slices.len()
    }

    fn sample_batch(&self, slice: usize, rng: &mut ChaCha8Rng) -> Result<RecBatch, MetaError> {
        let b = sample_bpr_batch(
            &self.slices[slice].positives,
            &self.observed,
            self.num_items,
            self.batch_size,
            rng,
        )?;
        if b.retry_cap_hits > 0 {
            log::debug!(
                "slice {slice}: {} negatives hit the retry cap",
                b.retry_cap_hits
            );
        }
        Ok(RecBatch {
            triples: b.triples,
            seed: step_seed(rng),
        })
    }

    fn loss(
        &self,
        slice: usize,
        batch: &RecBatch,
        gamma: &[f64],
        omega: &[f64],
        with_grad: bool,
    ) -> Result<JointLoss, MetaError> {
        let g = self.gtl.with_values(gamma.to_vec());
        let o = self.otl.with_values(omega.to_vec());
        let inputs = ForwardInputs {
            graph: &self.graph,
            sequences: &self.slices[slice].sequences,
            config: &self.model,
        };
        let mode = Mode::Train { seed: batch.seed };
        joint_bpr_loss(&g, &o, inputs, &batch.triples, self.bpr, mode, with_grad)
            .map_err(|source| MetaError::Model { slice, source })
    }
}
