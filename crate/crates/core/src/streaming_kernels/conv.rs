use rand::Rng;

use super::{check_dim, KernelError};
use crate::frames::Frames;
use crate::nn::Param;
use crate::scalar::Scalar;

/// Causal 1-D convolution over frames. Tap `k` of the kernel multiplies the
/// input `kernel - 1 - k` frames in the past; positions before the start of
/// the stream contribute nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalConv1d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    in_dim: usize,
    out_dim: usize,
    kernel: usize,
}

/// Carried state: the last `kernel - 1` input frames seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvState<T> {
    tail: Frames<T>,
    frames_consumed: usize,
}

impl<T: Scalar> ConvState<T> {
    pub fn frames_consumed(&self) -> usize {
        self.frames_consumed
    }

    pub fn tail_len(&self) -> usize {
        self.tail.len()
    }
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> CausalConv1d<T> {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        assert!(kernel >= 1, "kernel size must be >= 1");
        let std = 1.0 / ((in_dim * kernel).max(1) as f64).sqrt();
        Self {
            weight: Param::normal(format!("{name}.weight"), &[out_dim, kernel, in_dim], std, rng),
            bias: Param::zeros(format!("{name}.bias"), &[out_dim]),
            in_dim,
            out_dim,
            kernel,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn init_state(&self) -> ConvState<T> {
        ConvState { tail: Frames::new(self.in_dim), frames_consumed: 0 }
    }

    /// Output frame at window position `p`, reading `window[p + k - (K-1)]`.
    fn frame_at(&self, window: &Frames<T>, p: usize, out: &mut [T]) {
        let w = &self.weight.data;
        let (kn, din) = (self.kernel, self.in_dim);
        for (o, y) in out.iter_mut().enumerate() {
            let mut acc = self.bias.data[o];
            for k in 0..kn {
                let Some(src) = (p + k).checked_sub(kn - 1) else { continue };
                let x = window.row(src);
                let wk = &w[(o * kn + k) * din..(o * kn + k + 1) * din];
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
        for t in 0..x.len() {
            self.frame_at(x, t, out.row_mut(t));
        }
        Ok(out)
    }

    pub fn step(&self, state: &mut ConvState<T>, chunk: &Frames<T>) -> Result<Frames<T>, KernelError> {
        check_dim(self.in_dim, chunk.dim())?;
        if chunk.is_empty() {
            return Ok(Frames::new(self.out_dim));
        }
        let mut window = state.tail.clone();
        window.extend(chunk);
        let offset = state.tail.len();
        let mut out = Frames::zeros(chunk.len(), self.out_dim);
        for t in 0..chunk.len() {
            self.frame_at(&window, offset + t, out.row_mut(t));
        }
        window.keep_last(self.kernel - 1);
        state.tail = window;
        state.frames_consumed += chunk.len();
        Ok(out)
    }

    /// Gradients of a full-pass forward given `dL/dy`.
    pub fn backward_full(&self, x: &Frames<T>, grad_out: &Frames<T>) -> (Frames<T>, ConvGrads<T>) {
        let (kn, din, dout) = (self.kernel, self.in_dim, self.out_dim);
        let w = &self.weight.data;
        let mut gx = Frames::zeros(x.len(), din);
        let mut gw = vec![T::zero(); w.len()];
        let mut gb = vec![T::zero(); dout];
        for t in 0..x.len() {
            let go = grad_out.row(t);
            for o in 0..dout {
                let g = go[o];
                gb[o] += g;
                for k in 0..kn {
                    let Some(src) = (t + k).checked_sub(kn - 1) else { continue };
                    let base = (o * kn + k) * din;
                    let xr = x.row(src);
                    for i in 0..din {
                        gw[base + i] += g * xr[i];
                    }
                    let gxr = gx.row_mut(src);
                    for i in 0..din {
                        gxr[i] += g * w[base + i];
                    }
                }
            }
        }
        (gx, ConvGrads { weight: gw, bias: gb })
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn signal(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> Frames<f64> {
        Frames::from_vec(dim, (0..len * dim).map(|_| StandardNormal.sample(rng)).collect())
    }

    fn streamed(conv: &CausalConv1d<f64>, x: &Frames<f64>, chunk: usize) -> Frames<f64> {
        let mut st = conv.init_state();
        let mut out = Frames::new(conv.out_dim());
        let mut start = 0;
        while start < x.len() {
            let end = (start + chunk).min(x.len());
            out.extend(&conv.step(&mut st, &x.slice(start, end)).unwrap());
            start = end;
        }
        out
    }

    #[test]
    fn kernel_one_is_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = CausalConv1d::<f64>::new("c", 3, 2, 1, &mut rng);
        let x = signal(&mut rng, 9, 3);
        let mut st = conv.init_state();
        let full = conv.forward_full(&x).unwrap();
        for t in 0..9 {
            let y = conv.step(&mut st, &x.slice(t, t + 1)).unwrap();
            assert_eq!(y.row(0), full.row(t));
            assert_eq!(st.tail_len(), 0);
        }
    }

    #[test]
    fn chunkings_match_full_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = CausalConv1d::<f64>::new("c", 4, 5, 3, &mut rng);
        let x = signal(&mut rng, 64, 4);
        let full = conv.forward_full(&x).unwrap();
        for chunk in [1, 2, 7, 64] {
            assert!(streamed(&conv, &x, chunk).max_abs_diff(&full) <= 1e-6);
        }
    }

    #[test]
    fn empty_chunk_leaves_state_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = CausalConv1d::<f64>::new("c", 2, 2, 4, &mut rng);
        let mut st = conv.init_state();
        conv.step(&mut st, &signal(&mut rng, 5, 2)).unwrap();
        let before = st.clone();
        let y = conv.step(&mut st, &Frames::new(2)).unwrap();
        assert!(y.is_empty());
        assert_eq!(st, before);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let conv = CausalConv1d::<f64>::new("c", 2, 2, 2, &mut rng);
        let err = conv.step(&mut conv.init_state(), &Frames::zeros(3, 5)).unwrap_err();
        assert_eq!(err, KernelError::DimMismatch { expected: 2, got: 5 });
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut conv = CausalConv1d::<f64>::new("c", 3, 2, 3, &mut rng);
        for b in &mut conv.bias.data {
            *b = 0.1;
        }
        let x = signal(&mut rng, 6, 3);
        let loss = |c: &CausalConv1d<f64>, x: &Frames<f64>| -> f64 {
            c.forward_full(x).unwrap().as_slice().iter().map(|v| v * v / 2.0).sum()
        };
        let y = conv.forward_full(&x).unwrap();
        let (gx, g) = conv.backward_full(&x, &y);
        let eps = 1e-6;
        for i in 0..conv.weight.len() {
            let mut p = conv.clone();
            p.weight.data[i] += eps;
            let mut m = conv.clone();
            m.weight.data[i] -= eps;
            let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * eps);
            assert!((fd - g.weight[i]).abs() < 1e-6);
        }
        for i in 0..x.as_slice().len() {
            let mut xp = x.clone();
            xp.as_mut_slice()[i] += eps;
            let mut xm = x.clone();
            xm.as_mut_slice()[i] -= eps;
            let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * eps);
            assert!((fd - gx.as_slice()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn single_precision_within_1e4() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let conv64 = CausalConv1d::<f64>::new("c", 4, 4, 3, &mut rng);
        let conv32 = CausalConv1d::<f32> {
            weight: Param { name: "w".into(), shape: conv64.weight.shape.clone(), data: conv64.weight.data.iter().map(|&v| v as f32).collect() },
            bias: Param::zeros("b", &[4]),
            in_dim: 4,
            out_dim: 4,
            kernel: 3,
        };
        let x = signal(&mut rng, 40, 4);
        let full = conv64.forward_full(&x).unwrap();
        let mut st = conv32.init_state();
        let mut out = Frames::<f32>::new(4);
        for c in x.as_slice().chunks(4 * 6) {
            out.extend(&conv32.step(&mut st, &Frames::from_vec(4, c.iter().map(|&v| v as f32).collect())).unwrap());
        }
        assert!(out.cast::<f64>().max_abs_diff(&full) <= 1e-4);
    }
}
