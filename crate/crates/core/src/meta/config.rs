use serde::{Deserialize, Serialize};

use crate::model::{BprForm, ModelConfig};

use super::MetaError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaOptimizer {
    #[default]
    Sgd,
    Adam,
}

/// How a slice trajectory becomes a meta-gradient increment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaMode {
    /// Gradient-path increments with the identity-Jacobian approximation.
    #[default]
    Leap,
    /// Task gradient at the last inner parameters only.
    Fomaml,
}

impl std::fmt::Display for MetaMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MetaMode::Leap => "leap",
            MetaMode::Fomaml => "fomaml",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Inner SGD rate (alpha).
    pub inner_lr: f64,
    /// GTL meta rate (beta).
    pub gtl_meta_lr: f64,
    /// OTL meta rate (eta).
    pub otl_meta_lr: f64,
    /// Inner steps per slice (K).
    pub inner_steps: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub granularity_months: u32,
    pub gtl_dim: usize,
    pub otl_dim: usize,
    pub seed: u64,
    pub meta_optimizer: MetaOptimizer,
    pub meta_mode: MetaMode,
    /// Divide the OTL meta-gradient by the slice count too.
    pub normalize_otl_meta: bool,
    pub bpr: BprForm,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Keep every slice's final inner parameters of the selected epoch.
    pub record_slice_params: bool,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            inner_lr: 0.01,
            gtl_meta_lr: 0.01,
            otl_meta_lr: 0.01,
            inner_steps: 40,
            batch_size: 256,
            epochs: 20,
            granularity_months: 1,
            gtl_dim: 91,
            otl_dim: 91,
            seed: 0,
            meta_optimizer: MetaOptimizer::Sgd,
            meta_mode: MetaMode::Leap,
            normalize_otl_meta: false,
            bpr: BprForm::LogSigmoid,
            patience: 5,
            record_slice_params: false,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MetaError> {
        let bad = |m: String| Err(MetaError::InvalidConfig(m));
        for (name, v) in [
            ("inner_lr", self.inner_lr),
            ("gtl_meta_lr", self.gtl_meta_lr),
            ("otl_meta_lr", self.otl_meta_lr),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.inner_steps == 0 {
            return bad("inner_steps must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.granularity_months == 0 {
            return bad("granularity_months must be at least 1".into());
        }
        if self.gtl_dim == 0 && self.otl_dim == 0 {
            return bad("at least one of gtl_dim and otl_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return bad(format!(
                "dropout must lie in [0, 1), got {}",
                self.model.dropout
            ));
        }
        if self.model.positional_sa {
            return bad("positional self-attention is not implemented".into());
        }
        Ok(())
    }
}
