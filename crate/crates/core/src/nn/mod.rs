//! Small CNN engine: 3x3 same-padded convolutions, 2x2 max-pooling, batch
//! normalisation, ReLU, dense layers, softmax/linear heads, Adam, and the
//! three reference architectures.

mod checkpoint;
mod kernels;
mod network;
mod optim;
mod real;
mod spec;
mod train;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, meta_path, save_checkpoint};
pub use kernels::{BN_EPS, BN_MOMENTUM};
pub use network::{ForwardPass, Network, NetworkState, ParamEntry, Phase, RunningStats, Targets};
pub use optim::{adam_step, TrainConfig};
pub use real::Real;
pub use spec::{build_cnn, build_cnn_for, HeadKind, Layer, Mode, NetworkSpec, Shape, Variant, DEFAULT_INPUT, HIDDEN_DENSE};
pub use train::{predict_indices, train, EpochRecord, Examples, TrainTrace};

use crate::dataset::etns::EtnsError;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid network: {0}")]
    Spec(String),
    #[error("layer {layer} ({kind}): {msg}")]
    ShapeMismatch { layer: usize, kind: &'static str, msg: String },
    #[error("input of {got} values does not hold {n} samples of {expected}")]
    BadInput { expected: usize, n: usize, got: usize },
    #[error("bad targets: {0}")]
    BadTargets(String),
    #[error("non-finite loss in batch {batch}")]
    NonFiniteLoss { batch: usize },
    #[error("training diverged in epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize, trace: Box<TrainTrace> },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Etns(#[from] EtnsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
