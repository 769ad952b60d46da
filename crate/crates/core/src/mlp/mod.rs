//! Feed-forward network engine: initialization, forward pass,
//! backpropagation of a softmax cross-entropy loss, mini-batch SGD and
//! evaluation. All arithmetic is `f64`; a model and its training run stay on
//! one thread.

mod activation;
mod matrix;
mod network;
mod train;

pub use activation::{apply_activation, Activation, ActivationKind};
pub use matrix::Matrix;
pub use network::{argmax, init_network, ForwardTrace, Gradients, MlpModel, LOG_EPSILON};
pub use train::{evaluate, train, EpochLoss, TrainConfig, TrainReport};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MlpError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    Shape {
        what: String,
        expected: String,
        got: String,
    },
    #[error("input contains a non-finite value")]
    NonFiniteInput,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("cannot evaluate on zero rows")]
    EmptyEvaluation,
    #[error("training diverged at epoch {epoch}: loss became non-finite")]
    Diverged { epoch: usize },
}
