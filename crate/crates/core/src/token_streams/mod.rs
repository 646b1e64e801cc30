//! Token grids, the multi-stream delay pattern, the in-context prompt layout
//! and the Clip&Shuffle feature augmentation.

mod clip_shuffle;
mod delay;
mod grid;
mod icl;
mod msgrid;

pub use clip_shuffle::{clip_and_shuffle, ClipShuffleConfig, ClipShuffleOutput};
pub use delay::{apply_delay_pattern, check_delayed_prefix, remove_delay_pattern, DelayConfig, Undelayer};
pub use grid::{GridLayout, MultiStreamGrid, SemanticSequence};
pub use icl::{build_icl_sequence, IclItem, IclLayout, IclSequence, Sentinels};
pub use msgrid::{read_msgrid, write_msgrid, MSGRID_MAGIC};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TokenError {
    #[error("token {token} at (row {row}, col {col}) is outside codebook of size {codebook_size}")]
    TokenOutOfRange { row: usize, col: usize, token: u32, codebook_size: u32 },
    #[error("row {row} has {len} frames, expected {expected}")]
    RaggedRows { row: usize, len: usize, expected: usize },
    #[error("grid needs at least one stream")]
    NoStreams,
    #[error("pad token {pad} must lie outside the codebook (>= {codebook_size})")]
    PadInsideCodebook { pad: u32, codebook_size: u32 },
    #[error("pad token present in undelayed input at (row {row}, col {col})")]
    PadInInput { row: usize, col: usize },
    #[error("malformed delay-pattern pad layout at (row {row}, col {col})")]
    MalformedPadLayout { row: usize, col: usize },
    #[error("delayed grid has {frames} frames, needs at least {min} for {streams} streams")]
    TooShort { frames: usize, min: usize, streams: usize },
    #[error("column has {got} streams, expected {expected}")]
    ColumnWidth { got: usize, expected: usize },
    #[error("msgrid format: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for TokenError {
    fn from(e: std::io::Error) -> Self {
        TokenError::Io(e.to_string())
    }
}
