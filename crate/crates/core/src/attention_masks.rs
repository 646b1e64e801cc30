//! The four attention-mask variants of the streamable flow-matching model
//! (full, fully causal, 1 s and 2 s chunk-causal), the left-context cap and
//! the per-sample training variant sampler.
//!
//! Chunk-causal rows attend bidirectionally inside their chunk and to every
//! earlier key, optionally limited to `cap` frames counted back from the end
//! of the query's chunk.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::LEFT_CONTEXT_CAP_S;

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("chunk-causal masks need a positive frame rate (got {0})")]
    BadFrameRate(f64),
    #[error("{chunk_ms} ms is not a whole number of frames at {rate_hz} Hz")]
    NonIntegralChunk { chunk_ms: u32, rate_hz: f64 },
    #[error("left-context cap of {cap} frames is smaller than the {chunk}-frame chunk")]
    CapSmallerThanChunk { cap: usize, chunk: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MaskVariant {
    Full,
    FullyCausal,
    /// Chunk-causal with the given chunk duration.
    ChunkCausal { chunk_ms: u32 },
}

impl MaskVariant {
    pub const CHUNK_1S: MaskVariant = MaskVariant::ChunkCausal { chunk_ms: 1000 };
    pub const CHUNK_2S: MaskVariant = MaskVariant::ChunkCausal { chunk_ms: 2000 };

    /// The variants drawn from during mixed-mask training.
    pub const TRAINING: [MaskVariant; 4] =
        [MaskVariant::Full, MaskVariant::FullyCausal, MaskVariant::CHUNK_1S, MaskVariant::CHUNK_2S];

    pub fn is_chunked(&self) -> bool {
        matches!(self, MaskVariant::ChunkCausal { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub variant: MaskVariant,
    pub frame_rate_hz: f64,
    pub left_context_cap_s: Option<f64>,
}

fn seconds_to_frames(ms: f64, rate_hz: f64) -> Option<usize> {
    let f = ms * rate_hz / 1000.0;
    let r = f.round();
    ((f - r).abs() < 1e-9 && r >= 1.0).then_some(r as usize)
}

impl MaskSpec {
    pub fn new(variant: MaskVariant, frame_rate_hz: f64) -> Self {
        Self { variant, frame_rate_hz, left_context_cap_s: None }
    }

    /// Chunk variants get the default 2 s left-context cap.
    pub fn with_default_cap(variant: MaskVariant, frame_rate_hz: f64) -> Self {
        let cap = variant.is_chunked().then_some(LEFT_CONTEXT_CAP_S);
        Self { variant, frame_rate_hz, left_context_cap_s: cap }
    }

    pub fn with_cap_seconds(mut self, cap_s: Option<f64>) -> Self {
        self.left_context_cap_s = cap_s;
        self
    }

    /// Chunk length in frames for chunk variants.
    pub fn chunk_frames(&self) -> Result<Option<usize>, MaskError> {
        match self.variant {
            MaskVariant::ChunkCausal { chunk_ms } => {
                if !(self.frame_rate_hz > 0.0) {
                    return Err(MaskError::BadFrameRate(self.frame_rate_hz));
                }
                seconds_to_frames(chunk_ms as f64, self.frame_rate_hz)
                    .map(Some)
                    .ok_or(MaskError::NonIntegralChunk { chunk_ms, rate_hz: self.frame_rate_hz })
            }
            _ => Ok(None),
        }
    }

    /// Left-context cap in frames. Only chunk variants are capped.
    pub fn cap_frames(&self) -> Result<Option<usize>, MaskError> {
        let Some(chunk) = self.chunk_frames()? else { return Ok(None) };
        let Some(cap_s) = self.left_context_cap_s else { return Ok(None) };
        let cap = (cap_s * self.frame_rate_hz).round() as usize;
        if cap < chunk {
            return Err(MaskError::CapSmallerThanChunk { cap, chunk });
        }
        Ok(Some(cap))
    }

    pub fn validate(&self) -> Result<(), MaskError> {
        self.cap_frames().map(|_| ())
    }
}

/// Dense boolean mask: `allows(i, j)` is true when query `i` may attend key `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    len: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.len + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.allowed[i * self.len..(i + 1) * self.len]
    }

    pub fn from_fn(len: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allowed = Vec::with_capacity(len * len);
        for i in 0..len {
            for j in 0..len {
                allowed.push(f(i, j));
            }
        }
        Self { len, allowed }
    }

    /// 0/1 text grid, one line per query.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.len * (self.len + 1));
        for i in 0..self.len {
            for &a in self.row(i) {
                s.push(if a { '1' } else { '0' });
            }
            let _ = writeln!(s);
        }
        s
    }

    /// True when every allowed pair of `other` is also allowed here.
    pub fn contains(&self, other: &AttentionMask) -> bool {
        self.len == other.len && self.allowed.iter().zip(&other.allowed).all(|(&a, &b)| a || !b)
    }
}

/// Last frame of the chunk holding `i`, clipped to the sequence end.
pub fn chunk_end(i: usize, chunk: usize, len: usize) -> usize {
    ((i / chunk + 1) * chunk - 1).min(len.saturating_sub(1))
}

pub fn build_mask(spec: &MaskSpec, len: usize) -> Result<AttentionMask, MaskError> {
    let chunk = spec.chunk_frames()?;
    let cap = spec.cap_frames()?;
    Ok(match (spec.variant, chunk) {
        (MaskVariant::Full, _) => AttentionMask::from_fn(len, |_, _| true),
        (MaskVariant::FullyCausal, _) => AttentionMask::from_fn(len, |i, j| j <= i),
        // The cap window is anchored at the nominal chunk end, so a short
        // final chunk sees the same window it would inside a longer stream.
        (MaskVariant::ChunkCausal { .. }, Some(c)) => AttentionMask::from_fn(len, |i, j| {
            let nominal_end = (i / c + 1) * c - 1;
            j <= chunk_end(i, c, len) && cap.is_none_or(|cap| j + cap > nominal_end)
        }),
        (MaskVariant::ChunkCausal { .. }, None) => unreachable!("chunk variants always have a chunk length"),
    })
}

/// True iff executing the sequence chunk by chunk (chunks of `chunk_frames`)
/// sees every key the mask allows, i.e. no query looks past its chunk's end.
pub fn streaming_consistency_check(mask: &AttentionMask, chunk_frames: usize) -> bool {
    let n = mask.len();
    let c = chunk_frames.max(1);
    (0..n).all(|i| {
        let end = chunk_end(i, c, n);
        mask.row(i)[end + 1..].iter().all(|&a| !a)
    })
}

/// Draws one training variant uniformly from the four and attaches the 2 s
/// cap to the chunk variants.
pub fn sample_variant_with(rng: &mut impl Rng, frame_rate_hz: f64) -> MaskSpec {
    let v = MaskVariant::TRAINING[rng.gen_range(0..MaskVariant::TRAINING.len())];
    MaskSpec::with_default_cap(v, frame_rate_hz)
}

pub fn sample_training_variant(seed: u64, frame_rate_hz: f64) -> MaskSpec {
    sample_variant_with(&mut ChaCha8Rng::seed_from_u64(seed), frame_rate_hz)
}

/// Seeded stream of training variants.
#[derive(Debug, Clone)]
pub struct MaskSampler {
    rng: ChaCha8Rng,
    frame_rate_hz: f64,
}

impl MaskSampler {
    pub fn new(seed: u64, frame_rate_hz: f64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), frame_rate_hz }
    }
}

impl Iterator for MaskSampler {
    type Item = MaskSpec;

    fn next(&mut self) -> Option<MaskSpec> {
        Some(sample_variant_with(&mut self.rng, self.frame_rate_hz))
    }
}
