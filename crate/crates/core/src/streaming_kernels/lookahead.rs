use rand::Rng;

use super::{check_dim, KernelError};
use crate::frames::Frames;
use crate::nn::Param;
use crate::scalar::Scalar;

/// Convolution spanning `past` frames back and `future` frames ahead.
/// Output `i` reads inputs `i - past ..= i + future`; out-of-range inputs are
/// zero (skipped), which is also what the end-of-stream flush does.
#[derive(Debug, Clone, PartialEq)]
pub struct LookaheadConv<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    in_dim: usize,
    out_dim: usize,
    past: usize,
    future: usize,
}

/// Buffered inputs from `buf_start` on, plus emission bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct LookaheadState<T> {
    buf: Frames<T>,
    buf_start: usize,
    consumed: usize,
    emitted: usize,
    flushed: bool,
}

impl<T: Scalar> LookaheadState<T> {
    pub fn consumed(&self) -> usize {
        self.consumed
    }

    pub fn emitted(&self) -> usize {
        self.emitted
    }
}

impl<T: Scalar> LookaheadConv<T> {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, past: usize, future: usize, rng: &mut impl Rng) -> Self {
        let span = past + 1 + future;
        let std = 1.0 / ((in_dim * span).max(1) as f64).sqrt();
        Self {
            weight: Param::normal(format!("{name}.weight"), &[out_dim, span, in_dim], std, rng),
            bias: Param::zeros(format!("{name}.bias"), &[out_dim]),
            in_dim,
            out_dim,
            past,
            future,
        }
    }

    pub fn future(&self) -> usize {
        self.future
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn init_state(&self) -> LookaheadState<T> {
        LookaheadState { buf: Frames::new(self.in_dim), buf_start: 0, consumed: 0, emitted: 0, flushed: false }
    }

    /// Output frame `i` of a sequence of `len` frames whose frame `j` lives at
    /// `buf.row(j - buf_start)`.
    fn frame_at(&self, buf: &Frames<T>, buf_start: usize, len: usize, i: usize, out: &mut [T]) {
        let span = self.past + 1 + self.future;
        let din = self.in_dim;
        let w = &self.weight.data;
        for (o, y) in out.iter_mut().enumerate() {
            let mut acc = self.bias.data[o];
            for k in 0..span {
                let Some(j) = (i + k).checked_sub(self.past) else { continue };
                if j >= len {
                    continue;
                }
                let x = buf.row(j - buf_start);
                let wk = &w[(o * span + k) * din..(o * span + k + 1) * din];
                for (wi, xi) in wk.iter().zip(x) {
                    acc += *wi * *xi;
                }
            }
            *y = acc;
        }
    }

    pub fn forward_full(&self, x: &Frames<T>) -> Result<Frames<T>, KernelError> {
        check_dim(self.in_dim, x.dim())?;
        let mut out = Frames::zeros(x.len(), self.out_dim);
        for i in 0..x.len() {
            self.frame_at(x, 0, x.len(), i, out.row_mut(i));
        }
        Ok(out)
    }

    /// Consumes `chunk` and emits every output whose `future` inputs are now
    /// known. With `flush`, the stream ends and the held-back outputs are
    /// emitted against zero padding.
    pub fn step(&self, state: &mut LookaheadState<T>, chunk: &Frames<T>, flush: bool) -> Result<Frames<T>, KernelError> {
        check_dim(self.in_dim, chunk.dim())?;
        if state.flushed {
            return if chunk.is_empty() { Ok(Frames::new(self.out_dim)) } else { Err(KernelError::StreamEnded) };
        }
        state.buf.extend(chunk);
        state.consumed += chunk.len();
        let ready = if flush { state.consumed } else { state.consumed.saturating_sub(self.future) };
        // Unknown future frames are out of range only once the stream is flushed.
        let len = if flush { state.consumed } else { usize::MAX };
        let mut out = Frames::zeros(ready.saturating_sub(state.emitted), self.out_dim);
        for (n, i) in (state.emitted..ready).enumerate() {
            self.frame_at(&state.buf, state.buf_start, len, i, out.row_mut(n));
        }
        state.emitted = state.emitted.max(ready);
        state.flushed = flush;
        let keep_from = state.emitted.saturating_sub(self.past);
        if keep_from > state.buf_start {
            let drop = keep_from - state.buf_start;
            state.buf.take_front(drop);
            state.buf_start = keep_from;
        }
        Ok(out)
    }
}
