//! Local training stack: dataset handling, non-iid partitioning, and a
//! from-scratch multilayer perceptron trained with mini-batch SGD momentum.

mod data;
mod mlp;

pub use data::{
    load_dataset, load_idx, mnist_dataset, save_dataset, shard_partition, synth_dataset,
    Dataset, IdxData,
};
pub use mlp::{
    evaluate, init_params, local_train, loss_and_gradient, param_count, positive_scores,
    MlpConfig, SgdConfig,
};
