use super::{MetaOptimizer, MetaState, TrainConfig};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates for one parameter vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        }
    }
}

/// `gamma_bar -= (beta / T) acc_gamma` and `omega_bar -= eta acc_omega`
/// (`eta / T` with `normalize_otl_meta`). Adam sees the same scaled gradients.
pub fn meta_update(state: &mut MetaState, num_slices: usize, config: &TrainConfig) {
    let t = num_slices.max(1) as f64;
    let otl_scale = if config.normalize_otl_meta {
        1.0 / t
    } else {
        1.0
    };
    match config.meta_optimizer {
        MetaOptimizer::Sgd => {
            let gs = config.gtl_meta_lr / t;
            for (p, g) in state.gamma_bar.iter_mut().zip(&state.acc_gamma) {
                *p -= gs * g;
            }
            let os = config.otl_meta_lr * otl_scale;
            for (p, g) in state.omega_bar.iter_mut().zip(&state.acc_omega) {
                *p -= os * g;
            }
        }
        MetaOptimizer::Adam => {
            let g: Vec<f64> = state.acc_gamma.iter().map(|v| v / t).collect();
            state
                .adam_gamma
                .apply(&mut state.gamma_bar, &g, config.gtl_meta_lr);
            let o: Vec<f64> = state.acc_omega.iter().map(|v| v * otl_scale).collect();
            state
                .adam_omega
                .apply(&mut state.omega_bar, &o, config.otl_meta_lr);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(acc_g: Vec<f64>, acc_o: Vec<f64>) -> MetaState {
        MetaState::new(vec![0.0; acc_g.len()], vec![0.0; acc_o.len()])
            .with_accumulators(acc_g, acc_o)
    }

    #[test]
    fn gtl_is_averaged_over_slices_otl_is_not() {
        let t = 4;
        let mut s = state(vec![t as f64, 0.0], vec![1.0]);
        let cfg = TrainConfig::default();
        meta_update(&mut s, t, &cfg);
        assert!((s.gamma_bar[0] + 0.01).abs() < 1e-15);
        assert_eq!(s.gamma_bar[1], 0.0);
        assert!((s.omega_bar[0] + 0.01).abs() < 1e-15);

        let mut s = state(vec![0.0], vec![1.0]);
        let cfg = TrainConfig {
            normalize_otl_meta: true,
            ..TrainConfig::default()
        };
        meta_update(&mut s, t, &cfg);
        assert!((s.omega_bar[0] + 0.0025).abs() < 1e-15);
    }

    #[test]
    fn zero_accumulators_leave_parameters() {
        for opt in [MetaOptimizer::Sgd, MetaOptimizer::Adam] {
            let mut s = state(vec![0.0; 3], vec![0.0; 2]);
            s.gamma_bar = vec![1.0, 2.0, 3.0];
            let cfg = TrainConfig {
                meta_optimizer: opt,
                ..TrainConfig::default()
            };
            meta_update(&mut s, 3, &cfg);
            assert_eq!(s.gamma_bar, vec![1.0, 2.0, 3.0]);
            assert_eq!(s.omega_bar, vec![0.0; 2]);
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut s = state(vec![5.0], vec![-0.2]);
        let cfg = TrainConfig {
            meta_optimizer: MetaOptimizer::Adam,
            ..TrainConfig::default()
        };
        meta_update(&mut s, 2, &cfg);
        assert!((s.gamma_bar[0] + 0.01).abs() < 1e-8);
        assert!((s.omega_bar[0] - 0.01).abs() < 1e-8);
    }
}
