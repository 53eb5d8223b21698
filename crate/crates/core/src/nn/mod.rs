//! Trainable-layer substrate: dense and recurrent layers with hand-written
//! backward passes, losses, AdamW, the warmup schedule, finite-difference
//! gradient checking and checkpoints.

pub mod checkpoint;
pub mod dense;
pub mod dropout;
pub mod gradcheck;
pub mod loss;
pub mod lstm;
pub mod optim;
pub mod params;

pub use checkpoint::{Checkpoint, NamedTensor};
pub use dense::Dense;
pub use dropout::{dropout_mask, sample_dropout_mask};
pub use gradcheck::{gradcheck, gradcheck_with_floor, GradcheckReport};
pub use loss::{
    binary_cross_entropy, binary_cross_entropy_grad, cross_entropy, log_softmax, log_sum_exp, sigmoid, softmax,
    weighted_cross_entropy, weighted_cross_entropy_grad,
};
pub use lstm::{BiLstm, BiLstmCache, BiLstmLayer, LstmDirection};
pub use optim::{AdamWConfig, OptimizerState, WarmupSchedule};
pub use params::{ParamView, Params};

/// Generator used for dropout masks and data shuffling during training.
pub type TrainRng = rand_chacha::ChaCha8Rng;
