//! Shared fixtures for benchmarks.

use leaprec_core::data::slice_by_time;
use leaprec_core::meta::TrainConfig;
use leaprec_core::model::ModelConfig;
use leaprec_core::synthetic::SyntheticSpec;
use leaprec_core::TimeSlicedDataset;

/// Drifting synthetic dataset with `num_users` users and 2/3 as many items.
pub fn dataset(num_users: usize, num_slices: usize) -> TimeSlicedDataset {
    let spec = SyntheticSpec {
        num_users,
        num_items: num_users * 2 / 3,
        num_slices,
        interactions_per_slice: num_users * 5,
        ..SyntheticSpec::default()
    };
    let data = spec.generate().expect("valid spec");
    slice_by_time(data.log, 1, data.cut_time, 1).expect("non-empty training window")
}

pub fn config(dim: usize, inner_steps: usize) -> TrainConfig {
    TrainConfig {
        inner_lr: 2.0,
        inner_steps,
        epochs: 1,
        batch_size: 128,
        gtl_dim: dim,
        otl_dim: dim,
        patience: 0,
        model: ModelConfig {
            gnn_layers: 1,
            max_seq_len: 20,
            dropout: 0.1,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}
