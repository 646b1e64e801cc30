//! Stateful chunked execution primitives. Every kernel has a full-pass form
//! and a streaming form; feeding any chunking of a signal through the
//! streaming form reproduces the full pass with the same per-frame
//! summation order.

mod attention;
mod conv;
mod lookahead;
mod upsample;

pub use attention::{AttentionState, WindowedAttention};
pub use conv::{CausalConv1d, ConvGrads, ConvState};
pub use lookahead::{LookaheadConv, LookaheadState};
pub use upsample::upsample_step;

use thiserror::Error;

use crate::attention_masks::MaskError;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("feature width mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("upsampling factor must be >= 1")]
    BadFactor,
    #[error("chunk of {got} frames exceeds the {max}-frame attention chunk")]
    ChunkTooLarge { got: usize, max: usize },
    #[error("windowed attention needs a chunk-causal mask")]
    NotChunked,
    #[error("stream already ended with a partial chunk")]
    StreamEnded,
    #[error(transparent)]
    Mask(#[from] MaskError),
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<(), KernelError> {
    if expected == got {
        Ok(())
    } else {
        Err(KernelError::DimMismatch { expected, got })
    }
}
