//! End-to-end helpers: train on a sliced dataset, score the deployment
//! parameters on validation/test windows, and derive shift diagnostics.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::data::{
    build_graph, user_sequences, InteractionGraph, ObservedItems, TimeSlicedDataset, UserSequence,
};
use crate::eval::{evaluate, shift_series, EvalConfig, EvalReport, PopularityGroup, ShiftRow};
use crate::meta::{
    branch_shape, train, Branch, MetaError, MetaState, RecommenderObjective, SliceSnapshot,
    TrainConfig, TrainOutput,
};
use crate::model::{
    gnn_forward, mix_seed, Checkpoint, ForwardInputs, ModelConfig, ModelError, ParameterSet,
    Recommender,
};

/// Which interactions feed graph and user histories when scoring test cases.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum HistoryScope {
    /// Only interactions before the cut.
    #[default]
    TrainOnly,
    /// Interactions before the end of the validation window.
    ThroughValidation,
}

/// Result of [`fit`].
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub gtl: ParameterSet,
    pub otl: ParameterSet,
    pub gamma_bar: ParameterSet,
    pub omega_bar: ParameterSet,
    pub model: ModelConfig,
    pub graph: Arc<InteractionGraph>,
    pub output: TrainOutput,
}

impl TrainedModel {
    pub fn deployment_checkpoint(&self, config_hash: &str) -> Checkpoint {
        Checkpoint {
            kind: "deployment".into(),
            config_hash: config_hash.into(),
            model: self.model.clone(),
            gtl: self.gtl.clone(),
            otl: self.otl.clone(),
        }
    }

    pub fn meta_checkpoint(&self, config_hash: &str) -> Checkpoint {
        Checkpoint {
            kind: "meta".into(),
            config_hash: config_hash.into(),
            model: self.model.clone(),
            gtl: self.gamma_bar.clone(),
            otl: self.omega_bar.clone(),
        }
    }
}

/// Initial meta-parameters for both branches.
pub fn init_params(
    num_users: usize,
    num_items: usize,
    config: &TrainConfig,
) -> (ParameterSet, ParameterSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0x1217));
    let g = ParameterSet::init(
        branch_shape(num_users, num_items, config.gtl_dim, &config.model),
        config.model.init_std,
        &mut rng,
    );
    let o = ParameterSet::init(
        branch_shape(num_users, num_items, config.otl_dim, &config.model),
        config.model.init_std,
        &mut rng,
    );
    (g, o)
}

/// Graph and user histories used to score cases after the cut.
pub struct ScoringContext {
    pub graph: Arc<InteractionGraph>,
    pub sequences: Vec<UserSequence>,
    /// Every interaction of every user, train through test; negatives avoid it.
    pub history: ObservedItems,
}

impl ScoringContext {
    pub fn new(
        dataset: &TimeSlicedDataset,
        train_graph: Arc<InteractionGraph>,
        model: &ModelConfig,
        scope: HistoryScope,
    ) -> Result<Self, ModelError> {
        let (graph, reference) = match scope {
            HistoryScope::TrainOnly => (train_graph, dataset.cut_time()),
            HistoryScope::ThroughValidation => {
                let mut pairs = dataset.train_pairs();
                pairs.extend(dataset.val_pairs());
                let g = build_graph(dataset.num_users(), dataset.num_items(), pairs)?;
                (Arc::new(g), dataset.val_end())
            }
        };
        Ok(ScoringContext {
            graph,
            sequences: user_sequences(dataset, reference, model.max_seq_len),
            history: ObservedItems::from_pairs(dataset.num_users(), dataset.all_pairs()),
        })
    }

    pub fn recommender(
        &self,
        gtl: &ParameterSet,
        otl: &ParameterSet,
        model: &ModelConfig,
    ) -> Result<Recommender, ModelError> {
        let users: Vec<usize> = (0..gtl.shape().num_users).collect();
        Recommender::build(
            gtl,
            otl,
            ForwardInputs {
                graph: &self.graph,
                sequences: &self.sequences,
                config: model,
            },
            &users,
        )
    }
}

/// Trains both branches; when the dataset has validation interactions each
/// epoch's deployment parameters are scored by NDCG@5 and the best epoch kept.
pub fn fit(
    dataset: &TimeSlicedDataset,
    config: &TrainConfig,
    eval: &EvalConfig,
) -> Result<TrainedModel, MetaError> {
    config.validate()?;
    let objective = RecommenderObjective::new(dataset, config)?;
    let (g0, o0) = init_params(dataset.num_users(), dataset.num_items(), config);
    let state = MetaState::new(g0.values().to_vec(), o0.values().to_vec());

    let val_pairs = dataset.val_pairs();
    let ctx = ScoringContext::new(
        dataset,
        objective.graph().clone(),
        &config.model,
        HistoryScope::TrainOnly,
    )
    .map_err(|source| MetaError::Model { slice: 0, source })?;
    let mut val_eval = eval.clone();
    if !val_eval.ks.contains(&5) {
        val_eval.ks.push(5);
    }
    let mut validator = |gamma: &[f64], omega: &[f64]| -> Result<f64, MetaError> {
        let rec = ctx
            .recommender(
                &g0.with_values(gamma.to_vec()),
                &o0.with_values(omega.to_vec()),
                &config.model,
            )
            .map_err(|source| MetaError::Model { slice: 0, source })?;
        let report = evaluate(
            &rec,
            &val_pairs,
            &ctx.history,
            dataset.num_items(),
            &val_eval,
        )
        .map_err(|e| MetaError::Validation(e.to_string()))?;
        Ok(report.ndcg(5))
    };
    let validator: Option<&mut crate::meta::Validator<'_>> = if val_pairs.is_empty() {
        None
    } else {
        Some(&mut validator)
    };
    let output = train(&objective, config, state, validator)?;
    Ok(TrainedModel {
        gtl: g0.with_values(output.deploy_gamma.clone()),
        otl: o0.with_values(output.deploy_omega.clone()),
        gamma_bar: g0.with_values(output.meta.gamma_bar.clone()),
        omega_bar: o0.with_values(output.meta.omega_bar.clone()),
        model: config.model.clone(),
        graph: objective.graph().clone(),
        output,
    })
}

/// Scores `gtl + otl` on the test window.
pub fn test_report(
    dataset: &TimeSlicedDataset,
    gtl: &ParameterSet,
    otl: &ParameterSet,
    model: &ModelConfig,
    eval: &EvalConfig,
    scope: HistoryScope,
) -> Result<EvalReport, crate::Error> {
    let train_graph = Arc::new(build_graph(
        dataset.num_users(),
        dataset.num_items(),
        dataset.train_pairs(),
    )?);
    let ctx = ScoringContext::new(dataset, train_graph, model, scope)?;
    let rec = ctx.recommender(gtl, otl, model)?;
    Ok(evaluate(
        &rec,
        &dataset.test_pairs(),
        &ctx.history,
        dataset.num_items(),
        eval,
    )?)
}

/// Item rows of the propagated embedding table; empty for an unused branch.
pub fn propagated_items(
    params: &ParameterSet,
    graph: &InteractionGraph,
) -> Result<Vec<f64>, ModelError> {
    let shape = params.shape();
    if shape.dim == 0 {
        return Ok(Vec::new());
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false)?;
    let e = gnn_forward(&mut tape, params, &bound, graph)?;
    Ok(tape.value(e).data()[shape.num_users * shape.dim..].to_vec())
}

/// [`propagated_items`] for each snapshot's final parameters of `branch`.
pub fn item_tables(
    template: &ParameterSet,
    snapshots: &[SliceSnapshot],
    branch: Branch,
    graph: &InteractionGraph,
) -> Result<Vec<Vec<f64>>, ModelError> {
    snapshots
        .iter()
        .map(|s| {
            let values = match branch {
                Branch::Gtl => &s.gamma_final,
                Branch::Otl => &s.omega_final,
            };
            propagated_items(&template.with_values(values.clone()), graph)
        })
        .collect()
}

/// Shift rows of both branches over the recorded slices.
pub fn shift_report(
    trained: &TrainedModel,
    snapshots: &[SliceSnapshot],
    groups: &[PopularityGroup],
) -> Result<Vec<ShiftRow>, ModelError> {
    let mut rows = Vec::new();
    for (branch, template) in [(Branch::Gtl, &trained.gtl), (Branch::Otl, &trained.otl)] {
        let tables = item_tables(template, snapshots, branch, &trained.graph)?;
        rows.extend(shift_series(branch, &tables, template.shape().dim, groups));
    }
    Ok(rows)
}
