use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eval::path_length;
use crate::model::JointLoss;

use super::optimizer::{meta_update, AdamState};
use super::trajectory::{fomaml_accumulate, leap_accumulate, TrajectoryRecord, TrajectoryStep};
use super::{MetaError, MetaMode, TrainConfig};

/// A sequence of tasks (time slices) whose joint loss depends on the flat
/// GTL parameters `gamma` and OTL parameters `omega`.
pub trait MetaObjective {
    type Batch;

    fn num_slices(&self) -> usize;

    /// Draws the mini-batch for one inner step of `slice`.
    fn sample_batch(&self, slice: usize, rng: &mut ChaCha8Rng) -> Result<Self::Batch, MetaError>;

    /// Joint loss on `batch`; gradients only when `with_grad`.
    fn loss(
        &self,
        slice: usize,
        batch: &Self::Batch,
        gamma: &[f64],
        omega: &[f64],
        with_grad: bool,
    ) -> Result<JointLoss, MetaError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Branch {
    Gtl,
    Otl,
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Branch::Gtl => "gtl",
            Branch::Otl => "otl",
        })
    }
}

/// Meta-parameters, their gradient accumulators and optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaState {
    pub gamma_bar: Vec<f64>,
    pub omega_bar: Vec<f64>,
    pub acc_gamma: Vec<f64>,
    pub acc_omega: Vec<f64>,
    pub epoch: usize,
    pub adam_gamma: AdamState,
    pub adam_omega: AdamState,
}

impl MetaState {
    pub fn new(gamma_bar: Vec<f64>, omega_bar: Vec<f64>) -> Self {
        let (g, o) = (gamma_bar.len(), omega_bar.len());
        MetaState {
            gamma_bar,
            omega_bar,
            acc_gamma: vec![0.0; g],
            acc_omega: vec![0.0; o],
            epoch: 0,
            adam_gamma: AdamState::new(g),
            adam_omega: AdamState::new(o),
        }
    }

    pub fn with_accumulators(mut self, acc_gamma: Vec<f64>, acc_omega: Vec<f64>) -> Self {
        assert_eq!(acc_gamma.len(), self.gamma_bar.len());
        assert_eq!(acc_omega.len(), self.omega_bar.len());
        self.acc_gamma = acc_gamma;
        self.acc_omega = acc_omega;
        self
    }

    pub fn zero_accumulators(&mut self) {
        self.acc_gamma.fill(0.0);
        self.acc_omega.fill(0.0);
    }
}

/// One joint SGD step: both branches move along their gradients of the same
/// loss, then the loss is re-evaluated on the same batch.
pub fn inner_step<O: MetaObjective>(
    objective: &O,
    slice: usize,
    batch: &O::Batch,
    gamma: &mut [f64],
    omega: &mut [f64],
    inner_lr: f64,
) -> Result<(TrajectoryStep, TrajectoryStep), MetaError> {
    let before = objective.loss(slice, batch, gamma, omega, true)?;
    if !before.loss.is_finite() {
        return Err(MetaError::NonFiniteLoss {
            slice,
            value: before.loss,
        });
    }
    let apply = |params: &mut [f64], grad: &[f64]| -> Vec<f64> {
        params
            .iter_mut()
            .zip(grad)
            .map(|(p, g)| {
                let d = -inner_lr * g;
                *p += d;
                d
            })
            .collect()
    };
    let dg = apply(gamma, &before.gtl_grad);
    let dw = apply(omega, &before.otl_grad);
    let after = objective.loss(slice, batch, gamma, omega, false)?;
    if !after.loss.is_finite() {
        return Err(MetaError::NonFiniteLoss {
            slice,
            value: after.loss,
        });
    }
    Ok((
        TrajectoryStep {
            loss: before.loss,
            loss_after: after.loss,
            gradient: before.gtl_grad,
            delta: dg,
        },
        TrajectoryStep {
            loss: before.loss,
            loss_after: after.loss,
            gradient: before.otl_grad,
            delta: dw,
        },
    ))
}

/// Inner loop over one slice.
#[derive(Clone, Debug)]
pub struct SliceRun {
    pub gamma_start: Vec<f64>,
    pub omega_start: Vec<f64>,
    pub gamma: TrajectoryRecord,
    pub omega: TrajectoryRecord,
    pub gamma_final: Vec<f64>,
    pub omega_final: Vec<f64>,
}

/// `K` inner steps on `slice` with GTL starting at `gamma_bar` and OTL at
/// the carried `omega`.
pub fn run_slice<O: MetaObjective>(
    objective: &O,
    slice: usize,
    gamma_bar: &[f64],
    omega: Vec<f64>,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SliceRun, MetaError> {
    let gamma_start = gamma_bar.to_vec();
    let omega_start = omega;
    let mut gamma = gamma_start.clone();
    let mut omega = omega_start.clone();
    let mut tg = TrajectoryRecord::default();
    let mut to = TrajectoryRecord::default();
    for _ in 0..config.inner_steps {
        let batch = objective.sample_batch(slice, rng)?;
        let (sg, so) = inner_step(
            objective,
            slice,
            &batch,
            &mut gamma,
            &mut omega,
            config.inner_lr,
        )?;
        tg.steps.push(sg);
        to.steps.push(so);
    }
    Ok(SliceRun {
        gamma_start,
        omega_start,
        gamma: tg,
        omega: to,
        gamma_final: gamma,
        omega_final: omega,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub slice: usize,
    pub step: usize,
    pub loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathRecord {
    pub epoch: usize,
    pub slice: usize,
    pub branch: Branch,
    pub d2: f64,
}

/// Start and final inner parameters of one slice.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceSnapshot {
    pub slice: usize,
    pub gamma_start: Vec<f64>,
    pub omega_start: Vec<f64>,
    pub gamma_final: Vec<f64>,
    pub omega_final: Vec<f64>,
}

/// What happened in one outer iteration, kept when slice recording is on.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochTrace {
    pub epoch: usize,
    /// Meta-parameters at the start of the epoch.
    pub gamma_bar: Vec<f64>,
    pub omega_bar: Vec<f64>,
    pub slices: Vec<SliceSnapshot>,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub losses: Vec<LossRecord>,
    pub paths: Vec<PathRecord>,
    /// `(epoch, score)` for every validated epoch.
    pub validation: Vec<(usize, f64)>,
    pub epochs_run: usize,
    /// Epoch whose deployment parameters were kept.
    pub selected_epoch: usize,
    pub deploy_gamma: Vec<f64>,
    pub deploy_omega: Vec<f64>,
    /// Meta-parameters after the last meta-update.
    pub meta: MetaState,
    /// Empty unless `record_slice_params` is set.
    pub traces: Vec<EpochTrace>,
}

impl TrainOutput {
    /// Per-slice snapshots of the selected epoch, if recorded.
    pub fn selected_slices(&self) -> Option<&[SliceSnapshot]> {
        self.traces
            .iter()
            .find(|t| t.epoch == self.selected_epoch)
            .map(|t| t.slices.as_slice())
    }

    /// Mean recorded loss per slice for one epoch.
    pub fn mean_slice_losses(&self, epoch: usize) -> Vec<f64> {
        let mut sums: Vec<(f64, usize)> = Vec::new();
        for r in self.losses.iter().filter(|r| r.epoch == epoch) {
            if sums.len() <= r.slice {
                sums.resize(r.slice + 1, (0.0, 0));
            }
            sums[r.slice].0 += r.loss;
            sums[r.slice].1 += 1;
        }
        sums.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
    }

    /// Mean per-slice path length of one branch for one epoch.
    pub fn mean_path_length(&self, epoch: usize, branch: Branch) -> f64 {
        let v: Vec<f64> = self
            .paths
            .iter()
            .filter(|p| p.epoch == epoch && p.branch == branch)
            .map(|p| p.d2)
            .collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }
}

/// Scores deployment parameters `(gamma, omega)`; higher is better.
pub type Validator<'a> = dyn FnMut(&[f64], &[f64]) -> Result<f64, MetaError> + 'a;

/// Runs the outer loop for `config.epochs` epochs (or until validation stalls
/// for `patience` epochs). Epochs are numbered from 0.
pub fn train<O: MetaObjective>(
    objective: &O,
    config: &TrainConfig,
    state: MetaState,
    mut validator: Option<&mut Validator<'_>>,
) -> Result<TrainOutput, MetaError> {
    config.validate()?;
    let num_slices = objective.num_slices();
    if num_slices == 0 {
        return Err(MetaError::NoSlices);
    }
    let mut state = state;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = TrainOutput {
        losses: Vec::new(),
        paths: Vec::new(),
        validation: Vec::new(),
        epochs_run: 0,
        selected_epoch: 0,
        deploy_gamma: Vec::new(),
        deploy_omega: Vec::new(),
        meta: state.clone(),
        traces: Vec::new(),
    };
    let mut best = f64::NEG_INFINITY;
    let mut stale = 0;

    for epoch in 0..config.epochs {
        state.epoch = epoch;
        state.zero_accumulators();
        let mut trace = config.record_slice_params.then(|| EpochTrace {
            epoch,
            gamma_bar: state.gamma_bar.clone(),
            omega_bar: state.omega_bar.clone(),
            slices: Vec::new(),
        });
        let mut carried = state.omega_bar.clone();
        let mut deploy = (Vec::new(), Vec::new());
        for slice in 0..num_slices {
            let run = run_slice(
                objective,
                slice,
                &state.gamma_bar,
                carried,
                config,
                &mut rng,
            )?;
            for (step, s) in run.gamma.steps.iter().enumerate() {
                out.losses.push(LossRecord {
                    epoch,
                    slice,
                    step,
                    loss: s.loss,
                });
            }
            for (branch, rec) in [(Branch::Gtl, &run.gamma), (Branch::Otl, &run.omega)] {
                out.paths.push(PathRecord {
                    epoch,
                    slice,
                    branch,
                    d2: path_length(rec),
                });
            }
            match config.meta_mode {
                MetaMode::Leap => {
                    leap_accumulate(&mut state.acc_gamma, &run.gamma)?;
                    leap_accumulate(&mut state.acc_omega, &run.omega)?;
                }
                MetaMode::Fomaml => {
                    fomaml_accumulate(&mut state.acc_gamma, &run.gamma)?;
                    fomaml_accumulate(&mut state.acc_omega, &run.omega)?;
                }
            }
            if let Some(t) = trace.as_mut() {
                t.slices.push(SliceSnapshot {
                    slice,
                    gamma_start: run.gamma_start,
                    omega_start: run.omega_start,
                    gamma_final: run.gamma_final.clone(),
                    omega_final: run.omega_final.clone(),
                });
            }
            carried = run.omega_final.clone();
            if slice + 1 == num_slices {
                deploy = (run.gamma_final, run.omega_final);
            }
        }
        meta_update(&mut state, num_slices, config);
        if !state
            .gamma_bar
            .iter()
            .chain(&state.omega_bar)
            .all(|v| v.is_finite())
        {
            return Err(MetaError::NonFiniteMeta { epoch });
        }
        out.epochs_run = epoch + 1;
        if let Some(t) = trace {
            out.traces.push(t);
        }

        let score = match validator.as_deref_mut() {
            Some(v) => {
                let s = v(&deploy.0, &deploy.1)?;
                out.validation.push((epoch, s));
                log::info!("epoch {epoch}: validation {s:.4}");
                Some(s)
            }
            None => None,
        };
        let improved = match score {
            Some(s) => s > best,
            None => true,
        };
        if improved {
            best = score.unwrap_or(best);
            stale = 0;
            out.selected_epoch = epoch;
            out.deploy_gamma = deploy.0;
            out.deploy_omega = deploy.1;
        } else {
            stale += 1;
            if config.patience > 0 && stale >= config.patience {
                log::info!(
                    "early stop after epoch {epoch}; best epoch {}",
                    out.selected_epoch
                );
                break;
            }
        }
    }
    out.meta = state;
    Ok(out)
}

/// Seed for the dropout masks of one inner step.
pub(crate) fn step_seed(rng: &mut ChaCha8Rng) -> u64 {
    rng.random()
}
