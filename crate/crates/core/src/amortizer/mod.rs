//! Neural amortization of the optimal action. A small MLP is trained without
//! labels by minimising the Monte Carlo posterior expected loss of its own
//! predicted actions over decision problems drawn from a prior box.

mod mlp;
mod network;
mod train;

pub use mlp::{Dense, Mlp, Tape};
pub use network::{AmortizerNetwork, Checkpoint, Input, CHECKPOINT_FORMAT, CHECKPOINT_VERSION, HIDDEN_WIDTHS, M_FLOOR};
pub use train::{
    evaluate, init_seed, objective, quantile, relative_errors, sample_batch, train, train_with_progress, training_step,
    CheckpointRow, RmsProp, TrainingBatch, TrainingConfig, TrainingReport,
};
