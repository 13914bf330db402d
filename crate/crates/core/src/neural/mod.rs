//! Multi-layer LSTM classifier with a softmax head.
//!
//! Everything runs in `f64` on plain row-major buffers. A window is a flat
//! slice of `steps × input_width` values; the head reads the top layer's
//! hidden state at the final step.

mod lstm;
mod matrix;
mod optim;
mod params;
mod train;

pub use lstm::{
    argmax, backward, batch_loss, cross_entropy, forward, logits, lstm_step, predict, softmax,
    ForwardCache, StepCache, LOG_EPS,
};
pub use matrix::{dot, Matrix};
pub use optim::{adam_step, apply_update, sgd_step, OptimizerState};
pub use params::{
    glorot_limit, he_limit, init_params, HyperParams, KernelInit, LstmLayerParams, ModelParams,
    Optimizer, OutputActivation, RecurrentInit,
};
pub use train::{train, EpochProgress};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum NeuralError {
    #[error("input shape does not match the model")]
    ShapeMismatch,
    #[error("invalid model shape: {0}")]
    BadShape(&'static str),
    #[error("label {0} is outside the class range")]
    BadLabel(usize),
    #[error("forward cache was produced by different parameters")]
    StaleCache,
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid hyperparameters: {0}")]
    BadHyperParams(&'static str),
}
