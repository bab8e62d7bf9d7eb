use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::autodiff::{AutodiffError, GradientMap, Tape, Tensor, Var};

/// Architecture of one recommender branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct BranchShape {
    pub num_users: usize,
    pub num_items: usize,
    /// Embedding width; `0` disables the branch.
    pub dim: usize,
    pub gnn_layers: usize,
    pub sa_layers: usize,
}

impl BranchShape {
    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn is_unused(&self) -> bool {
        self.dim == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Names, shapes and flat offsets of a branch's tensors, in declared order:
/// embedding table, then per GNN layer `w_self, w_neigh`, then per SA layer
/// `w_q, w_k, w_v, ln1.scale, ln1.shift, ffn.w1, ffn.b1, ffn.w2, ffn.b2,
/// ln2.scale, ln2.shift`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    shape: BranchShape,
    entries: Vec<ParamEntry>,
    total: usize,
}

pub(crate) const SA_TENSORS: usize = 11;

impl ParamLayout {
    pub fn new(shape: BranchShape) -> Self {
        let mut entries = Vec::new();
        let mut total = 0;
        if shape.dim > 0 {
            let d = shape.dim;
            let mut push = |name: String, dims: Vec<usize>| {
                let len: usize = dims.iter().product();
                entries.push(ParamEntry {
                    name,
                    shape: dims,
                    offset: total,
                });
                total += len;
            };
            push("embedding".into(), vec![shape.num_nodes(), d]);
            for l in 0..shape.gnn_layers {
                push(format!("gnn.{l}.w_self"), vec![d, d]);
                push(format!("gnn.{l}.w_neigh"), vec![d, d]);
            }
            for l in 0..shape.sa_layers {
                for (name, dims) in [
                    ("w_q", vec![d, d]),
                    ("w_k", vec![d, d]),
                    ("w_v", vec![d, d]),
                    ("ln1.scale", vec![d]),
                    ("ln1.shift", vec![d]),
                    ("ffn.w1", vec![d, d]),
                    ("ffn.b1", vec![d]),
                    ("ffn.w2", vec![d, d]),
                    ("ffn.b2", vec![d]),
                    ("ln2.scale", vec![d]),
                    ("ln2.shift", vec![d]),
                ] {
                    push(format!("sa.{l}.{name}"), dims);
                }
            }
        }
        ParamLayout {
            shape,
            entries,
            total,
        }
    }

    pub fn shape(&self) -> BranchShape {
        self.shape
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub(crate) fn gnn_index(&self, layer: usize) -> usize {
        1 + 2 * layer
    }

    pub(crate) fn sa_index(&self, layer: usize) -> usize {
        1 + 2 * self.shape.gnn_layers + SA_TENSORS * layer
    }
}

/// All parameters of one recommender branch stored as one flat vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    layout: Arc<ParamLayout>,
    values: Vec<f64>,
}

impl ParameterSet {
    pub fn zeros(shape: BranchShape) -> Self {
        let layout = Arc::new(ParamLayout::new(shape));
        let values = vec![0.0; layout.total_len()];
        ParameterSet { layout, values }
    }

    /// Embeddings ~ Normal(0, init_std^2), square transforms Xavier-uniform,
    /// biases and LayerNorm shifts 0, LayerNorm scales 1.
    pub fn init<R: Rng + ?Sized>(shape: BranchShape, init_std: f64, rng: &mut R) -> Self {
        let mut p = ParameterSet::zeros(shape);
        if shape.dim == 0 {
            return p;
        }
        let normal = Normal::new(0.0, init_std).expect("finite init std");
        let d = shape.dim as f64;
        let limit = (6.0 / (2.0 * d)).sqrt();
        let xavier = Uniform::new_inclusive(-limit, limit).expect("valid range");
        let layout = p.layout.clone();
        for entry in layout.entries() {
            let slot = &mut p.values[entry.offset..entry.offset + entry.len()];
            if entry.name == "embedding" {
                slot.iter_mut().for_each(|v| *v = normal.sample(rng));
            } else if entry.name.ends_with(".scale") {
                slot.fill(1.0);
            } else if entry.shape.len() == 2 {
                slot.iter_mut().for_each(|v| *v = xavier.sample(rng));
            }
        }
        p
    }

    pub fn from_values(shape: BranchShape, values: Vec<f64>) -> Option<Self> {
        let layout = Arc::new(ParamLayout::new(shape));
        (values.len() == layout.total_len()).then_some(ParameterSet { layout, values })
    }

    /// Same layout, new values. Panics if the length differs.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len(), "parameter vector length");
        ParameterSet {
            layout: self.layout.clone(),
            values,
        }
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn shape(&self) -> BranchShape {
        self.layout.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        ParameterSet {
            layout: self.layout.clone(),
            values: vec![0.0; self.values.len()],
        }
    }

    pub fn tensor(&self, index: usize) -> Tensor {
        let e = &self.layout.entries[index];
        Tensor::new(
            e.shape.clone(),
            self.values[e.offset..e.offset + e.len()].to_vec(),
        )
        .expect("layout matches storage")
    }

    pub fn slice(&self, index: usize) -> &[f64] {
        let e = &self.layout.entries[index];
        &self.values[e.offset..e.offset + e.len()]
    }

    /// Rows `[num_users, num_nodes)` of the embedding table.
    pub fn item_embeddings(&self) -> &[f64] {
        let s = self.shape();
        if s.dim == 0 {
            return &[];
        }
        &self.slice(0)[s.num_users * s.dim..]
    }

    /// Places every tensor on `tape`, as trainable parameters or constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundParams, AutodiffError> {
        let mut vars = Vec::with_capacity(self.layout.entries.len());
        for idx in 0..self.layout.entries.len() {
            let t = self.tensor(idx);
            vars.push(if trainable {
                tape.param(t)?
            } else {
                tape.leaf(t)?
            });
        }
        Ok(BoundParams { vars })
    }

    /// Flattens the gradients of `bound` back into this set's layout.
    pub fn gather_gradient(&self, grads: &GradientMap, bound: &BoundParams) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.values.len());
        for &v in &bound.vars {
            out.extend_from_slice(grads.wrt(v).data());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Tape handles for each tensor of a [`ParameterSet`], in layout order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

impl BoundParams {
    pub fn embedding(&self) -> Var {
        self.vars[0]
    }
}
