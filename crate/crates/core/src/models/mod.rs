//! Residual stream networks: the appearance (I) stream, the compressed
//! motion (P) stream and the optical-flow teacher.

mod network;
mod spec;

pub use network::{ConvBn, ForwardTrace, Network, ResBlock, StreamOutput, HEAD_INIT_STD, STEM_POOL};
pub use spec::{
    parse_inflate_at, NetworkSpec, FLOW_CHANNELS, MR_CHANNELS, NUM_STAGES, RGB_CHANNELS,
};

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error("bad input: {0}")]
    Input(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// 2D RGB network applied to individual I-frames.
pub fn build_i_stream<T: Scalar>(spec: &NetworkSpec, seed: u64) -> Result<Network<T>, ModelError> {
    if spec.inflate_at.is_some() {
        return Err(ModelError::Spec("the I-stream is purely 2D".into()));
    }
    if spec.input_channels != RGB_CHANNELS {
        return Err(ModelError::Spec(format!("I-stream takes {RGB_CHANNELS} channels")));
    }
    Network::build(spec, seed)
}

/// MV+R clip network. `inflate_at = None` gives the per-frame 2D variant.
pub fn build_p_stream<T: Scalar>(spec: &NetworkSpec, seed: u64) -> Result<Network<T>, ModelError> {
    if spec.input_channels != MR_CHANNELS {
        return Err(ModelError::Spec(format!("P-stream takes {MR_CHANNELS} channels")));
    }
    Network::build(spec, seed)
}

/// Flow teacher paired with `student`. Its pooled feature must have the
/// student's width, and `inflated` must agree with `spec.inflate_at`.
pub fn build_of_teacher<T: Scalar>(
    spec: &NetworkSpec,
    student: &NetworkSpec,
    inflated: bool,
    seed: u64,
) -> Result<Network<T>, ModelError> {
    if spec.input_channels != FLOW_CHANNELS {
        return Err(ModelError::Spec(format!("the flow teacher takes {FLOW_CHANNELS} channels")));
    }
    if spec.feature_width() != student.feature_width() {
        return Err(ModelError::Spec(format!(
            "teacher feature width {} differs from student {}",
            spec.feature_width(),
            student.feature_width()
        )));
    }
    if inflated != spec.first_3d_stage().is_some() {
        return Err(ModelError::Spec(format!(
            "inflated={inflated} contradicts inflate_at={:?}",
            spec.inflate_at
        )));
    }
    Network::build(spec, seed)
}

pub fn forward_stream<T: Scalar>(
    net: &Network<T>,
    input: &Tensor<T>,
    train: bool,
) -> Result<StreamOutput<T>, ModelError> {
    net.forward(input, train)
}

/// Per-video score of the I-stream: the mean of its per-frame logits
/// `[frames, classes]`.
pub fn mean_frame_logits<T: Scalar>(logits: &Tensor<T>) -> Result<Vec<T>, ModelError> {
    let s = logits.shape();
    if s.len() != 2 || s[0] == 0 {
        return Err(ModelError::Input(format!("expected [frames, classes], got {s:?}")));
    }
    let (n, k) = (s[0], s[1]);
    let d = logits.data();
    let inv = T::one() / T::of(n as f64);
    Ok((0..k).map(|c| (0..n).map(|r| d[r * k + c]).sum::<T>() * inv).collect())
}

