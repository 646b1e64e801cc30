//! Clip&Shuffle: pick one contiguous segment covering 25-75% of a feature
//! sequence, cut it into 1-second slices and permute them.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::frames::Frames;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipShuffleConfig {
    pub frame_rate_hz: f64,
    pub slice_seconds: f64,
    pub min_frac: f64,
    pub max_frac: f64,
}

impl ClipShuffleConfig {
    pub fn new(frame_rate_hz: f64) -> Self {
        Self { frame_rate_hz, slice_seconds: 1.0, min_frac: 0.25, max_frac: 0.75 }
    }

    pub fn slice_frames(&self) -> usize {
        ((self.slice_seconds * self.frame_rate_hz).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipShuffleOutput<T> {
    pub frames: Frames<T>,
    pub segment_start: usize,
    pub segment_len: usize,
    /// Slice indices (into the segment) in output order.
    pub slice_order: Vec<usize>,
}

pub fn clip_and_shuffle<T: Scalar>(features: &Frames<T>, seed: u64, cfg: &ClipShuffleConfig) -> ClipShuffleOutput<T> {
    let n = features.len();
    let slice = cfg.slice_frames();
    if n <= slice {
        return ClipShuffleOutput { frames: features.clone(), segment_start: 0, segment_len: n, slice_order: vec![0] };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = ((cfg.min_frac * n as f64).ceil() as usize).clamp(1, n);
    let hi = ((cfg.max_frac * n as f64).floor() as usize).clamp(lo, n);
    let len = rng.gen_range(lo..=hi);
    let start = rng.gen_range(0..=n - len);
    let n_slices = len.div_ceil(slice);
    let mut order: Vec<usize> = (0..n_slices).collect();
    order.shuffle(&mut rng);
    let mut frames = Frames::new(features.dim());
    for &k in &order {
        let a = start + k * slice;
        let b = (a + slice).min(start + len);
        frames.extend(&features.slice(a, b));
    }
    ClipShuffleOutput { frames, segment_start: start, segment_len: len, slice_order: order }
}
