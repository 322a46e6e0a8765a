//! Miniature two-branch correction network with hand-written backward passes.
//!
//! The flow branch predicts a flow per decoder level; the correction branch
//! warps its encoder features with those flows inside the skip connections
//! and emits an image per decoder level plus the final full-size image.

pub mod adam;
pub mod checkpoint;
pub mod model;
pub mod ops;
pub mod tensor;
pub mod train;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use model::{ForwardTrace, LossReport, NetConfig, Network, Target};
pub use tensor::Tensor;
pub use train::{
    evaluate_set, load_training_set, loss_curve_csv, train, train_on, train_step, write_loss_curve, TrainConfig,
    TrainSample,
};
