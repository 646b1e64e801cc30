use rand::Rng;

use super::{check_dim, KernelError};
use crate::attention_masks::{AttentionMask, MaskSpec};
use crate::frames::Frames;
use crate::nn::Param;
use crate::scalar::Scalar;

/// Single-head scaled dot-product attention with fixed projections.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedAttention<T> {
    pub wq: Param<T>,
    pub wk: Param<T>,
    pub wv: Param<T>,
    pub wo: Param<T>,
    in_dim: usize,
    head_dim: usize,
    out_dim: usize,
}

/// KV cache for chunk-wise execution, trimmed to the left-context cap.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionState<T> {
    keys: Frames<T>,
    values: Frames<T>,
    frames_consumed: usize,
    peak_cached: usize,
    ended: bool,
}

impl<T: Scalar> AttentionState<T> {
    pub fn cached_frames(&self) -> usize {
        self.keys.len()
    }

    /// Largest cache size observed after any step.
    pub fn peak_cached(&self) -> usize {
        self.peak_cached
    }

    pub fn frames_consumed(&self) -> usize {
        self.frames_consumed
    }
}

fn project<T: Scalar>(w: &[T], rows: usize, cols: usize, x: &[T], out: &mut [T]) {
    for r in 0..rows {
        let mut acc = T::zero();
        for (wi, xi) in w[r * cols..(r + 1) * cols].iter().zip(x) {
            acc += *wi * *xi;
        }
        out[r] = acc;
    }
}

impl<T: Scalar> WindowedAttention<T> {
    pub fn new(name: &str, in_dim: usize, head_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let si = 1.0 / (in_dim.max(1) as f64).sqrt();
        let sh = 1.0 / (head_dim.max(1) as f64).sqrt();
        Self {
            wq: Param::normal(format!("{name}.wq"), &[head_dim, in_dim], si, rng),
            wk: Param::normal(format!("{name}.wk"), &[head_dim, in_dim], si, rng),
            wv: Param::normal(format!("{name}.wv"), &[head_dim, in_dim], si, rng),
            wo: Param::normal(format!("{name}.wo"), &[out_dim, head_dim], sh, rng),
            in_dim,
            head_dim,
            out_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn init_state(&self) -> AttentionState<T> {
        AttentionState {
            keys: Frames::new(self.head_dim),
            values: Frames::new(self.head_dim),
            frames_consumed: 0,
            peak_cached: 0,
            ended: false,
        }
    }

    fn qkv(&self, x: &Frames<T>) -> (Frames<T>, Frames<T>, Frames<T>) {
        let h = self.head_dim;
        let mut q = Frames::zeros(x.len(), h);
        let mut k = Frames::zeros(x.len(), h);
        let mut v = Frames::zeros(x.len(), h);
        for i in 0..x.len() {
            project(&self.wq.data, h, self.in_dim, x.row(i), q.row_mut(i));
            project(&self.wk.data, h, self.in_dim, x.row(i), k.row_mut(i));
            project(&self.wv.data, h, self.in_dim, x.row(i), v.row_mut(i));
        }
        (q, k, v)
    }

    /// Attends `q` over `keys(j)/values(j)` for `j` in `keys` order, then
    /// applies the output projection.
    fn attend<'a>(&self, q: &[T], kv: impl Iterator<Item = (&'a [T], &'a [T])> + Clone, out: &mut [T])
    where
        T: 'a,
    {
        let scale = T::one() / T::from_count(self.head_dim).sqrt();
        let dot = |a: &[T], b: &[T]| a.iter().zip(b).fold(T::zero(), |s, (x, y)| s + *x * *y) * scale;
        let mut max = T::neg_infinity();
        for (k, _) in kv.clone() {
            max = max.max(dot(q, k));
        }
        let mut z = T::zero();
        let mut acc = vec![T::zero(); self.head_dim];
        for (k, v) in kv {
            let e = (dot(q, k) - max).exp();
            z += e;
            for (a, vi) in acc.iter_mut().zip(v) {
                *a += e * *vi;
            }
        }
        for a in &mut acc {
            *a /= z;
        }
        project(&self.wo.data, self.out_dim, self.head_dim, &acc, out);
    }

    /// Full-pass attention under an arbitrary mask; keys visited in ascending order.
    pub fn forward_masked(&self, x: &Frames<T>, mask: &AttentionMask) -> Result<Frames<T>, KernelError> {
        check_dim(self.in_dim, x.dim())?;
        assert_eq!(mask.len(), x.len(), "mask length must match sequence length");
        let (q, k, v) = self.qkv(x);
        let mut out = Frames::zeros(x.len(), self.out_dim);
        for i in 0..x.len() {
            let row = mask.row(i);
            let kv = (0..x.len()).filter(|&j| row[j]).map(|j| (k.row(j), v.row(j)));
            self.attend(q.row(i), kv, out.row_mut(i));
        }
        Ok(out)
    }

    /// Processes one chunk of a chunk-causal stream. All chunks but the last
    /// must be exactly the spec's chunk length; a shorter chunk ends the stream.
    pub fn step(&self, state: &mut AttentionState<T>, chunk: &Frames<T>, spec: &MaskSpec) -> Result<Frames<T>, KernelError> {
        check_dim(self.in_dim, chunk.dim())?;
        let c = spec.chunk_frames()?.ok_or(KernelError::NotChunked)?;
        let cap = spec.cap_frames()?;
        if chunk.len() > c {
            return Err(KernelError::ChunkTooLarge { got: chunk.len(), max: c });
        }
        if chunk.is_empty() {
            return Ok(Frames::new(self.out_dim));
        }
        if state.ended {
            return Err(KernelError::StreamEnded);
        }
        let (q, k, v) = self.qkv(chunk);
        let start = state.frames_consumed;
        let cache_start = start - state.keys.len();
        let nominal_end = start + c - 1;
        let first = cap.map_or(0, |cap| (nominal_end + 1).saturating_sub(cap)).max(cache_start);
        let cached = (first..start).map(|j| (state.keys.row(j - cache_start), state.values.row(j - cache_start)));
        let mut out = Frames::zeros(chunk.len(), self.out_dim);
        for i in 0..chunk.len() {
            let kv = cached.clone().chain((0..chunk.len()).map(|j| (k.row(j), v.row(j))));
            self.attend(q.row(i), kv, out.row_mut(i));
        }
        state.keys.extend(&k);
        state.values.extend(&v);
        if let Some(cap) = cap {
            state.keys.keep_last(cap);
            state.values.keep_last(cap);
        }
        state.frames_consumed += chunk.len();
        state.peak_cached = state.peak_cached.max(state.keys.len());
        state.ended = chunk.len() < c;
        Ok(out)
    }
}
