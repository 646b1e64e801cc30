//! Ordered product quantizer and the toy causal codec around it.
//!
//! The encoder reads 640-sample frames at 16 kHz, the decoder writes
//! 960-sample frames at 24 kHz. Both are a dense projection plus a causal
//! conv, so chunked and full passes agree. The quantizer splits each 64-dim
//! embedding into 8 disjoint groups with one codebook per group (one token
//! stream each). Training drops trailing streams at random so that earlier
//! streams carry the coarser information.

mod codec;
mod quantizer;
mod train;

pub use codec::{CodecConfig, DecodeState, EncodeState, ToyCodec, CODEC_CHECKPOINT_KIND};
pub use quantizer::OpqQuantizer;
pub use train::{
    eval_reconstruction, held_out_embeddings, train_codec, CodecExample, CodecTrainConfig, CodecTrainReport,
};

use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::streaming_kernels::KernelError;
use crate::token_streams::TokenError;

#[derive(Debug, Error)]
pub enum OpqError {
    #[error("vector has dim {got}, quantizer expects {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("keep_k {0} outside 1..=8")]
    KeepOutOfRange(usize),
    #[error("id {id} on stream {stream} outside codebook of size {size}")]
    IdOutOfRange { stream: usize, id: u32, size: u32 },
    #[error("grid has {got} streams, codec expects {expected}")]
    StreamCount { expected: usize, got: usize },
    #[error("non-finite loss in stage {stage} at step {step}")]
    NonFinite { stage: u8, step: usize },
    #[error("training data is empty")]
    NoData,
    #[error("encoder stream already finished")]
    Finished,
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Token(#[from] TokenError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}
