//! Fixtures shared by integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use leaprec_core::autodiff::gradcheck::{check_gradient, GradCheck};
use leaprec_core::autodiff::{CsrMatrix, Tape, Tensor, Var};
use leaprec_core::data::{build_graph, BprTriple, InteractionGraph, UserSequence};
use leaprec_core::meta::branch_shape;
use leaprec_core::model::{
    joint_bpr_loss, BprForm, ForwardInputs, Mode, ModelConfig, ParameterSet,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;

pub struct OpCase {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub positive: bool,
    pub build: Build,
}

fn case(
    name: &'static str,
    shapes: &[&[usize]],
    build: impl Fn(&mut Tape, &[Var]) -> Var + 'static,
) -> OpCase {
    OpCase {
        name,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        positive: false,
        build: Box::new(build),
    }
}

/// One case per differentiable primitive of the tape.
pub fn op_cases() -> Vec<OpCase> {
    let csr = Arc::new(CsrMatrix::from_triplets(
        3,
        4,
        &[
            (0, 1, 0.5),
            (0, 3, -1.0),
            (1, 0, 2.0),
            (2, 2, 0.25),
            (2, 3, 1.5),
        ],
    ));
    let factors = Arc::new(vec![0.5, -2.0, 1.5]);
    let mask = Arc::new(vec![1.0, 0.0, 2.0, 1.0, 0.0, 1.0]);
    let mut cases = vec![
        case("matmul", &[&[3, 2], &[2, 4]], |t, v| {
            t.matmul(v[0], v[1]).unwrap()
        }),
        case("transpose", &[&[3, 2]], |t, v| t.transpose(v[0]).unwrap()),
        case("add", &[&[2, 3], &[2, 3]], |t, v| {
            t.add(v[0], v[1]).unwrap()
        }),
        case("sub", &[&[2, 3], &[2, 3]], |t, v| {
            t.sub(v[0], v[1]).unwrap()
        }),
        case("mul", &[&[2, 3], &[2, 3]], |t, v| {
            t.mul(v[0], v[1]).unwrap()
        }),
        case("scale", &[&[2, 3]], |t, v| t.scale(v[0], -1.7).unwrap()),
        case("add_row", &[&[3, 2], &[2]], |t, v| {
            t.add_row(v[0], v[1]).unwrap()
        }),
        case("scale_rows", &[&[3, 2]], move |t, v| {
            t.scale_rows(v[0], factors.clone()).unwrap()
        }),
        case("mask_mul", &[&[2, 3]], move |t, v| {
            t.mask_mul(v[0], mask.clone()).unwrap()
        }),
        case("dropout", &[&[3, 4]], |t, v| {
            t.dropout(v[0], 0.3, 11).unwrap()
        }),
        case("sigmoid", &[&[2, 3]], |t, v| t.sigmoid(v[0]).unwrap()),
        case("relu", &[&[2, 3]], |t, v| t.relu(v[0]).unwrap()),
        case("exp", &[&[2, 3]], |t, v| t.exp(v[0]).unwrap()),
        case("log_sigmoid", &[&[2, 3]], |t, v| {
            t.log_sigmoid(v[0]).unwrap()
        }),
        case("sum", &[&[2, 3]], |t, v| t.sum(v[0]).unwrap()),
        case("mean", &[&[2, 3]], |t, v| t.mean(v[0]).unwrap()),
        case("gather_rows", &[&[3, 2]], |t, v| {
            t.gather_rows(v[0], Arc::new(vec![2, 0, 2, 1])).unwrap()
        }),
        case("concat_rows", &[&[1, 3], &[2, 3]], |t, v| {
            t.concat_rows(&[v[0], v[1], v[0]]).unwrap()
        }),
        case("softmax_rows", &[&[2, 4]], |t, v| {
            t.softmax_rows(v[0]).unwrap()
        }),
        case("layer_norm_rows", &[&[3, 4], &[4], &[4]], |t, v| {
            t.layer_norm_rows(v[0], v[1], v[2]).unwrap()
        }),
        case("dot_rows", &[&[3, 2], &[3, 2]], |t, v| {
            t.dot_rows(v[0], v[1]).unwrap()
        }),
        case("l2_norm", &[&[2, 3]], |t, v| t.l2_norm(v[0]).unwrap()),
        case("spmm", &[&[4, 2]], move |t, v| {
            t.spmm(csr.clone(), v[0]).unwrap()
        }),
    ];
    let mut positive = vec![
        case("log", &[&[2, 3]], |t, v| t.log(v[0]).unwrap()),
        case("normalize_rows", &[&[2, 3]], |t, v| {
            t.normalize_rows(v[0]).unwrap()
        }),
    ];
    for c in &mut positive {
        c.positive = true;
    }
    cases.extend(positive);
    cases
}

fn sample(shape: &[usize], positive: bool, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product::<usize>().max(1);
    let data = (0..n)
        .map(|_| {
            if positive {
                rng.random_range(0.5..2.0)
            } else {
                StandardNormal.sample(rng)
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Checks `sum(w * op(inputs))` for a random point and random weights `w`.
pub fn check_op(case: &OpCase, rng: &mut ChaCha8Rng) -> GradCheck {
    let inputs: Vec<Tensor> = case
        .shapes
        .iter()
        .map(|s| sample(s, case.positive, rng))
        .collect();
    let out_shape = {
        let mut t = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone()).unwrap()).collect();
        let out = (case.build)(&mut t, &vars);
        t.shape(out).to_vec()
    };
    let w = sample(&out_shape, false, rng);
    let objective = |tape: &mut Tape, vars: &[Var]| -> Var {
        let out = (case.build)(tape, vars);
        let wv = tape.leaf(w.clone()).unwrap();
        let prod = tape.mul(out, wv).unwrap();
        tape.sum(prod).unwrap()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|x| tape.param(x.clone()).unwrap())
        .collect();
    let loss = objective(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<f64> = vars
        .iter()
        .flat_map(|&v| grads.wrt(v).data().to_vec())
        .collect();
    let flat: Vec<f64> = inputs.iter().flat_map(|x| x.data().to_vec()).collect();

    let f = |p: &[f64]| {
        let mut tape = Tape::new();
        let mut off = 0;
        let vars: Vec<Var> = inputs
            .iter()
            .map(|x| {
                let n = x.numel();
                let t = Tensor::new(x.shape().to_vec(), p[off..off + n].to_vec()).unwrap();
                off += n;
                tape.leaf(t).unwrap()
            })
            .collect();
        let l = objective(&mut tape, &vars);
        tape.value(l).item()
    };
    check_gradient(f, &flat, &analytic, 1e-6)
}

/// Small random recommender instance: graph, histories, triples and both branches.
pub struct RecFixture {
    pub gtl: ParameterSet,
    pub otl: ParameterSet,
    pub graph: InteractionGraph,
    pub sequences: Vec<UserSequence>,
    pub triples: Vec<BprTriple>,
    pub config: ModelConfig,
}

impl RecFixture {
    pub fn new(num_users: usize, num_items: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let config = ModelConfig {
            gnn_layers: 1,
            sa_layers: 1,
            max_seq_len: 5,
            dropout: 0.2,
            ..ModelConfig::default()
        };
        let mut pairs = Vec::new();
        for u in 0..num_users {
            for i in 0..num_items {
                if rng.random::<f64>() < 0.35 {
                    pairs.push((u, i));
                }
            }
        }
        let graph = build_graph(num_users, num_items, pairs).unwrap();
        let sequences = (0..num_users)
            .map(|u| UserSequence {
                user: u,
                // user 0 keeps an empty history
                items: (0..if u == 0 { 0 } else { rng.random_range(1..=5) })
                    .map(|_| rng.random_range(0..num_items))
                    .collect(),
            })
            .collect();
        let triples = (0..10)
            .map(|_| {
                let pos = rng.random_range(0..num_items);
                let mut neg = rng.random_range(0..num_items - 1);
                if neg >= pos {
                    neg += 1;
                }
                BprTriple {
                    user: rng.random_range(0..num_users),
                    pos,
                    neg,
                }
            })
            .collect();
        let shape = branch_shape(num_users, num_items, dim, &config);
        let gtl = ParameterSet::init(shape, 0.5, rng);
        let otl = ParameterSet::init(shape, 0.5, rng);
        RecFixture {
            gtl,
            otl,
            graph,
            sequences,
            triples,
            config,
        }
    }

    /// Loss at the flat point `[gamma, omega]`, dropout seeded with `seed`.
    pub fn loss(&self, point: &[f64], seed: u64) -> f64 {
        let n = self.gtl.len();
        joint_bpr_loss(
            &self.gtl.with_values(point[..n].to_vec()),
            &self.otl.with_values(point[n..].to_vec()),
            self.inputs(),
            &self.triples,
            BprForm::LogSigmoid,
            Mode::Train { seed },
            false,
        )
        .unwrap()
        .loss
    }

    pub fn gradient(&self, point: &[f64], seed: u64) -> Vec<f64> {
        let n = self.gtl.len();
        let l = joint_bpr_loss(
            &self.gtl.with_values(point[..n].to_vec()),
            &self.otl.with_values(point[n..].to_vec()),
            self.inputs(),
            &self.triples,
            BprForm::LogSigmoid,
            Mode::Train { seed },
            true,
        )
        .unwrap();
        l.gtl_grad.into_iter().chain(l.otl_grad).collect()
    }

    pub fn inputs(&self) -> ForwardInputs<'_> {
        ForwardInputs {
            graph: &self.graph,
            sequences: &self.sequences,
            config: &self.config,
        }
    }

    /// A fresh random point with every coordinate drawn from `N(0, std^2)`.
    pub fn random_point(&self, std: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.gtl.len() + self.otl.len())
            .map(|_| std * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect::<Vec<f64>>()
    }
}

/// Gradient check of the full joint loss at one random point.
pub fn check_full_loss(fx: &RecFixture, rng: &mut ChaCha8Rng) -> GradCheck {
    let point = fx.random_point(0.5, rng);
    let seed: u64 = rng.random();
    let analytic = fx.gradient(&point, seed);
    check_gradient(|p| fx.loss(p, seed), &point, &analytic, 1e-6)
}
