//! A small dense classifier with hand-written reverse-mode gradients and the
//! training-time calibration losses (label smoothing, focal, CS-KD, logit
//! L_p penalty, mixup).

mod gradcheck;
mod loss;
mod network;
mod params;

use thiserror::Error;

pub use gradcheck::{grad_check, GRAD_CHECK_STEP, LP_KINK_MARGIN};
pub use loss::{mixup_batch, sample_mixup_lambda, smooth_targets, Batch, LossKind, LossSpec};
pub use network::{cskd_loss, forward, loss_and_grad, loss_with_teacher, teacher_distribution};
pub use params::{Activation, LayoutEntry, NetworkSpec, ParamVector};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("invalid loss configuration: {0}")]
    InvalidLoss(String),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("CS-KD needs a paired same-class batch")]
    MissingPairs,
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("parameter file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;
