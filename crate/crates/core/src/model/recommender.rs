//! Forward pass of one branch: embedding table, GCN propagation,
//! position-free self-attention over the user's history, dot-product scores.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::{BprTriple, InteractionGraph, UserSequence};

use super::{BoundParams, ModelError, ParameterSet};

/// How attention logits become weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionNorm {
    /// `softmax` over keys for each query.
    #[default]
    Softmax,
    /// Plain division by the logit sum, no exponent.
    Literal,
}

/// Architecture settings shared by both branches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub gnn_layers: usize,
    pub sa_layers: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
    pub attention: AttentionNorm,
    pub init_std: f64,
    /// Accepted for compatibility with positional-SA configs; must stay `false`.
    pub positional_sa: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            gnn_layers: 2,
            sa_layers: 1,
            max_seq_len: 50,
            dropout: 0.2,
            attention: AttentionNorm::Softmax,
            init_std: 0.01,
            positional_sa: false,
        }
    }
}

/// Whether dropout is active for a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64 },
    Eval,
}

/// SplitMix64 finalizer, used to derive independent dropout seeds.
pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Applies `gnn_layers` rounds of
/// `e_m <- relu(a_mm e_m W1 + sum_n a_mn e_n W2)` to the embedding table.
pub fn gnn_forward(
    tape: &mut Tape,
    params: &ParameterSet,
    bound: &BoundParams,
    graph: &InteractionGraph,
) -> Result<Var, ModelError> {
    let shape = params.shape();
    if graph.num_nodes() != shape.num_nodes() {
        return Err(ModelError::GraphMismatch {
            graph_nodes: graph.num_nodes(),
            model_nodes: shape.num_nodes(),
        });
    }
    let mut e = bound.embedding();
    for l in 0..shape.gnn_layers {
        let idx = params.layout().gnn_index(l);
        let (w_self, w_neigh) = (bound.vars[idx], bound.vars[idx + 1]);
        let own = tape.matmul(e, w_self)?;
        let own = tape.scale_rows(own, graph.self_coefficients().clone())?;
        let msg = tape.matmul(e, w_neigh)?;
        let msg = tape.spmm(graph.adjacency().clone(), msg)?;
        let pre = tape.add(own, msg)?;
        e = tape.relu(pre)?;
    }
    Ok(e)
}

/// Runs the self-attention stack over `[history items..., user]` and returns
/// the `1 x d` output at the user position.
#[allow(clippy::too_many_arguments)]
pub fn sa_forward(
    tape: &mut Tape,
    params: &ParameterSet,
    bound: &BoundParams,
    table: Var,
    sequence: &[usize],
    user: usize,
    config: &ModelConfig,
    mode: Mode,
) -> Result<Var, ModelError> {
    let shape = params.shape();
    let num_users = shape.num_users;
    let mut indices: Vec<usize> = sequence.iter().map(|&i| num_users + i).collect();
    indices.push(user);
    let n = indices.len();
    let mut x = tape.gather_rows(table, Arc::new(indices))?;
    if shape.sa_layers == 0 {
        return Ok(tape.gather_rows(x, Arc::new(vec![n - 1]))?);
    }
    let inv_sqrt_d = 1.0 / (shape.dim as f64).sqrt();
    for l in 0..shape.sa_layers {
        let base = params.layout().sa_index(l);
        let w = &bound.vars[base..base + super::params::SA_TENSORS];
        let (w_q, w_k, w_v) = (w[0], w[1], w[2]);
        let (ln1_scale, ln1_shift) = (w[3], w[4]);
        let (ffn_w1, ffn_b1, ffn_w2, ffn_b2) = (w[5], w[6], w[7], w[8]);
        let (ln2_scale, ln2_shift) = (w[9], w[10]);

        // Only the user position is read after the last layer, so the last
        // layer computes just that query row.
        let last = l + 1 == shape.sa_layers;
        let queries_in = if last && n > 1 {
            tape.gather_rows(x, Arc::new(vec![n - 1]))?
        } else {
            x
        };
        let q = tape.matmul(queries_in, w_q)?;
        let k = tape.matmul(x, w_k)?;
        let v = tape.matmul(x, w_v)?;
        let kt = tape.transpose(k)?;
        let logits = tape.matmul(q, kt)?;
        let logits = tape.scale(logits, inv_sqrt_d)?;
        let weights = match config.attention {
            AttentionNorm::Softmax => tape.softmax_rows(logits)?,
            AttentionNorm::Literal => tape.normalize_rows(logits)?,
        };
        let z = tape.matmul(weights, v)?;
        let z = apply_dropout(tape, z, config.dropout, mode, user, l, 0)?;
        let h = tape.add(z, queries_in)?;
        let h = tape.layer_norm_rows(h, ln1_scale, ln1_shift)?;

        let f = tape.matmul(h, ffn_w1)?;
        let f = tape.add_row(f, ffn_b1)?;
        let f = tape.relu(f)?;
        let f = tape.matmul(f, ffn_w2)?;
        let f = tape.add_row(f, ffn_b2)?;
        let f = apply_dropout(tape, f, config.dropout, mode, user, l, 1)?;
        let out = tape.add(f, h)?;
        x = tape.layer_norm_rows(out, ln2_scale, ln2_shift)?;
    }
    Ok(x)
}

fn apply_dropout(
    tape: &mut Tape,
    x: Var,
    rate: f64,
    mode: Mode,
    user: usize,
    layer: usize,
    site: u64,
) -> Result<Var, ModelError> {
    match mode {
        Mode::Train { seed } if rate > 0.0 => {
            let s = mix_seed(mix_seed(seed, user as u64), (layer as u64) << 8 | site);
            Ok(tape.dropout(x, rate, s)?)
        }
        _ => Ok(x),
    }
}

/// Dot product of a user vector with row `num_users + item` of the refined table.
pub fn score(user_vec: &[f64], item_table: &[f64], num_users: usize, item: usize) -> f64 {
    let d = user_vec.len();
    let row = &item_table[(num_users + item) * d..(num_users + item + 1) * d];
    user_vec.iter().zip(row).map(|(a, b)| a * b).sum()
}

/// Everything a forward pass needs besides the parameters.
#[derive(Clone, Copy)]
pub struct ForwardInputs<'a> {
    pub graph: &'a InteractionGraph,
    pub sequences: &'a [UserSequence],
    pub config: &'a ModelConfig,
}

/// Positive and negative score vectors of one branch for a batch of triples.
/// `None` for an unused (`dim == 0`) branch.
pub fn branch_triple_scores(
    tape: &mut Tape,
    params: &ParameterSet,
    bound: &BoundParams,
    inputs: ForwardInputs<'_>,
    triples: &[BprTriple],
    mode: Mode,
) -> Result<Option<(Var, Var)>, ModelError> {
    if params.shape().is_unused() {
        return Ok(None);
    }
    let num_users = params.shape().num_users;
    let table = gnn_forward(tape, params, bound, inputs.graph)?;

    let mut slot: HashMap<usize, usize> = HashMap::new();
    let mut users = Vec::new();
    let mut user_rows = Vec::with_capacity(triples.len());
    for t in triples {
        let next = users.len();
        let s = *slot.entry(t.user).or_insert_with(|| {
            users.push(t.user);
            next
        });
        user_rows.push(s);
    }
    let mut vecs = Vec::with_capacity(users.len());
    for &u in &users {
        let seq = inputs
            .sequences
            .get(u)
            .map(|s| s.items.as_slice())
            .unwrap_or(&[]);
        vecs.push(sa_forward(
            tape,
            params,
            bound,
            table,
            seq,
            u,
            inputs.config,
            mode,
        )?);
    }
    let user_mat = tape.concat_rows(&vecs)?;
    let user_b = tape.gather_rows(user_mat, Arc::new(user_rows))?;
    let pos_rows = triples.iter().map(|t| num_users + t.pos).collect();
    let neg_rows = triples.iter().map(|t| num_users + t.neg).collect();
    let pos_items = tape.gather_rows(table, Arc::new(pos_rows))?;
    let neg_items = tape.gather_rows(table, Arc::new(neg_rows))?;
    let pos = tape.dot_rows(user_b, pos_items)?;
    let neg = tape.dot_rows(user_b, neg_items)?;
    Ok(Some((pos, neg)))
}

/// Precomputed refined item table and user vectors of one branch.
#[derive(Clone, Debug)]
pub struct BranchEmbeddings {
    pub dim: usize,
    pub num_users: usize,
    /// `(num_users + num_items) x dim` GNN output.
    pub table: Vec<f64>,
    /// `num_users x dim` self-attention outputs (zero rows for users not built).
    pub users: Vec<f64>,
}

impl BranchEmbeddings {
    pub fn compute(
        params: &ParameterSet,
        inputs: ForwardInputs<'_>,
        users: &[usize],
    ) -> Result<Self, ModelError> {
        let shape = params.shape();
        let d = shape.dim;
        if d == 0 {
            return Ok(BranchEmbeddings {
                dim: 0,
                num_users: shape.num_users,
                table: Vec::new(),
                users: Vec::new(),
            });
        }
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false)?;
        let table = gnn_forward(&mut tape, params, &bound, inputs.graph)?;
        let table_vals = tape.value(table).data().to_vec();
        let mut user_vals = vec![0.0; shape.num_users * d];
        for &u in users {
            let seq = inputs
                .sequences
                .get(u)
                .map(|s| s.items.as_slice())
                .unwrap_or(&[]);
            let v = sa_forward(
                &mut tape,
                params,
                &bound,
                table,
                seq,
                u,
                inputs.config,
                Mode::Eval,
            )?;
            user_vals[u * d..(u + 1) * d].copy_from_slice(tape.value(v).data());
        }
        Ok(BranchEmbeddings {
            dim: d,
            num_users: shape.num_users,
            table: table_vals,
            users: user_vals,
        })
    }

    pub fn user_vec(&self, user: usize) -> &[f64] {
        &self.users[user * self.dim..(user + 1) * self.dim]
    }

    pub fn item_vec(&self, item: usize) -> &[f64] {
        let row = self.num_users + item;
        &self.table[row * self.dim..(row + 1) * self.dim]
    }

    pub fn score(&self, user: usize, item: usize) -> f64 {
        if self.dim == 0 {
            return 0.0;
        }
        score(self.user_vec(user), &self.table, self.num_users, item)
    }
}

/// Deployment-time scorer summing both branches.
#[derive(Clone, Debug)]
pub struct Recommender {
    pub gtl: BranchEmbeddings,
    pub otl: BranchEmbeddings,
}

impl Recommender {
    /// Builds user vectors for `users`; pass every user index to score anyone.
    pub fn build(
        gtl: &ParameterSet,
        otl: &ParameterSet,
        inputs: ForwardInputs<'_>,
        users: &[usize],
    ) -> Result<Self, ModelError> {
        Ok(Recommender {
            gtl: BranchEmbeddings::compute(gtl, inputs, users)?,
            otl: BranchEmbeddings::compute(otl, inputs, users)?,
        })
    }

    /// Summed branch scores; an unused branch contributes 0.
    pub fn score_combined(&self, user: usize, item: usize) -> f64 {
        self.gtl.score(user, item) + self.otl.score(user, item)
    }
}
