use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::BprTriple;

use super::recommender::{branch_triple_scores, ForwardInputs, Mode};
use super::{ModelError, ParameterSet};

/// Pairwise ranking objective applied to `pos - neg` score differences.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BprForm {
    /// `mean(-ln sigmoid(pos - neg))`.
    #[default]
    LogSigmoid,
    /// `mean(-sigmoid(pos - neg))`, without the logarithm.
    Literal,
}

/// Scalar BPR loss over paired score vectors.
pub fn bpr_loss(tape: &mut Tape, pos: Var, neg: Var, form: BprForm) -> Result<Var, ModelError> {
    let diff = tape.sub(pos, neg)?;
    let per = match form {
        BprForm::LogSigmoid => tape.log_sigmoid(diff)?,
        BprForm::Literal => tape.sigmoid(diff)?,
    };
    let m = tape.mean(per)?;
    Ok(tape.scale(m, -1.0)?)
}

/// Loss value and flat gradients for both branches.
#[derive(Clone, Debug)]
pub struct JointLoss {
    pub loss: f64,
    pub gtl_grad: Vec<f64>,
    pub otl_grad: Vec<f64>,
}

/// BPR loss of the fused score `f_gtl + f_otl` on `triples`. Gradients are
/// returned only when `with_grad` is set; otherwise the vectors are empty.
pub fn joint_bpr_loss(
    gtl: &ParameterSet,
    otl: &ParameterSet,
    inputs: ForwardInputs<'_>,
    triples: &[BprTriple],
    form: BprForm,
    mode: Mode,
    with_grad: bool,
) -> Result<JointLoss, ModelError> {
    if triples.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    if gtl.shape().is_unused() && otl.shape().is_unused() {
        return Err(ModelError::NoBranches);
    }
    let mut tape = Tape::new();
    let gb = gtl.bind(&mut tape, with_grad)?;
    let ob = otl.bind(&mut tape, with_grad)?;
    // Distinct dropout streams per branch.
    let (gm, om) = match mode {
        Mode::Train { seed } => (
            Mode::Train {
                seed: super::recommender::mix_seed(seed, 1),
            },
            Mode::Train {
                seed: super::recommender::mix_seed(seed, 2),
            },
        ),
        Mode::Eval => (Mode::Eval, Mode::Eval),
    };
    let g = branch_triple_scores(&mut tape, gtl, &gb, inputs, triples, gm)?;
    let o = branch_triple_scores(&mut tape, otl, &ob, inputs, triples, om)?;
    let (pos, neg) = match (g, o) {
        (Some((gp, gn)), Some((op, on))) => (tape.add(gp, op)?, tape.add(gn, on)?),
        (Some(s), None) | (None, Some(s)) => s,
        (None, None) => unreachable!(),
    };
    let loss = bpr_loss(&mut tape, pos, neg, form)?;
    let value = tape.value(loss).item();
    if !with_grad {
        return Ok(JointLoss {
            loss: value,
            gtl_grad: Vec::new(),
            otl_grad: Vec::new(),
        });
    }
    let grads = tape.backward(loss)?;
    Ok(JointLoss {
        loss: value,
        gtl_grad: gtl.gather_gradient(&grads, &gb),
        otl_grad: otl.gather_gradient(&grads, &ob),
    })
}
