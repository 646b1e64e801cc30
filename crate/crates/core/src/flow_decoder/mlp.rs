use rand::Rng;

use crate::frames::Frames;
use crate::nn::{tanh_grad, Dense, Param};
use crate::scalar::Scalar;

/// Frame-wise multilayer perceptron: tanh on hidden layers, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
}

/// Activations kept for the backward pass. `inputs[k]` feeds layer `k`.
#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    pub inputs: Vec<Frames<T>>,
    pub output: Frames<T>,
}

impl<T: Scalar> Mlp<T> {
    /// `sizes = [in, hidden..., out]`.
    pub fn new(name: &str, sizes: &[usize], bias: bool, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes.windows(2).enumerate().map(|(k, w)| Dense::new(&format!("{name}.{k}"), w[0], w[1], bias, rng)).collect();
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    pub fn forward_cached(&self, x: &Frames<T>) -> MlpCache<T> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let y = layer.forward(&h);
            inputs.push(h);
            h = if k < last { y.map(|v| v.tanh()) } else { y };
        }
        MlpCache { inputs, output: h }
    }

    pub fn forward(&self, x: &Frames<T>) -> Frames<T> {
        self.forward_cached(x).output
    }

    /// Accumulates parameter gradients (in [`Mlp::params`] order) for
    /// `dL/d output = grad_out`.
    pub fn backward(&self, cache: &MlpCache<T>, grad_out: &Frames<T>, grads: &mut [Vec<T>]) {
        let mut g = grad_out.clone();
        let mut slot = grads.len();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let mut lg = layer.zero_grads();
            let gin = layer.backward(&cache.inputs[k], &g, &mut lg);
            let tensors = lg.into_tensors();
            slot -= tensors.len();
            for (dst, src) in grads[slot..].iter_mut().zip(tensors) {
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
            if k > 0 {
                // inputs[k] = tanh(pre-activation of layer k-1)
                let act = &cache.inputs[k];
                g = Frames::from_vec(
                    gin.dim(),
                    gin.as_slice().iter().zip(act.as_slice()).map(|(&gi, &a)| gi * tanh_grad(a)).collect(),
                );
            }
        }
    }

    pub fn zero_grads(&self) -> Vec<Vec<T>> {
        self.params().iter().map(|p| vec![T::zero(); p.len()]).collect()
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss(m: &Mlp<f64>, x: &Frames<f64>, y: &Frames<f64>) -> f64 {
        let out = m.forward(x);
        out.as_slice().iter().zip(y.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / out.as_slice().len() as f64
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Mlp::<f64>::new("m", &[3, 5, 4, 2], true, &mut rng);
        let x = Frames::from_vec(3, (0..12).map(|i| (i as f64 * 0.37).sin()).collect());
        let y = Frames::from_vec(2, (0..8).map(|i| (i as f64 * 0.11).cos()).collect());
        let cache = m.forward_cached(&x);
        let n = cache.output.as_slice().len() as f64;
        let go = Frames::from_vec(
            2,
            cache.output.as_slice().iter().zip(y.as_slice()).map(|(a, b)| 2.0 * (a - b) / n).collect(),
        );
        let mut grads = m.zero_grads();
        m.backward(&cache, &go, &mut grads);
        let eps = 1e-6;
        for t in 0..grads.len() {
            for i in 0..grads[t].len() {
                let mut p = m.clone();
                p.params_mut()[t].data[i] += eps;
                let mut q = m.clone();
                q.params_mut()[t].data[i] -= eps;
                let fd = (loss(&p, &x, &y) - loss(&q, &x, &y)) / (2.0 * eps);
                assert!((fd - grads[t][i]).abs() < 1e-8, "tensor {t} index {i}: {fd} vs {}", grads[t][i]);
            }
        }
    }

    #[test]
    fn zero_batch_gives_zero_gradient_without_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Mlp::<f64>::new("m", &[4, 6, 3], false, &mut rng);
        let x = Frames::zeros(5, 4);
        let cache = m.forward_cached(&x);
        assert!(cache.output.as_slice().iter().all(|&v| v == 0.0));
        let mut grads = m.zero_grads();
        m.backward(&cache, &Frames::zeros(5, 3), &mut grads);
        assert!(grads.iter().flatten().all(|&g| g == 0.0));
    }
}
