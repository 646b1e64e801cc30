//! Minimal trainable building blocks: named parameter tensors, a dense layer
//! with hand-written backward pass, and Adam.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::frames::Frames;
use crate::scalar::Scalar;

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { name: name.into(), shape: shape.to_vec(), data: vec![T::zero(); n] }
    }

    /// Gaussian init with standard deviation `std`.
    pub fn normal(name: impl Into<String>, shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(name, shape);
        for v in &mut p.data {
            let z: f64 = StandardNormal.sample(rng);
            *v = T::lit(z * std);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Anything exposing an ordered list of parameter tensors.
pub trait Parameterized<T: Scalar> {
    fn params(&self) -> Vec<&Param<T>>;
    fn params_mut(&mut self) -> Vec<&mut Param<T>>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Copies every parameter into one flat vector, in `params()` order.
    fn flat_params(&self) -> Vec<T>
    where
        T: Copy,
    {
        self.params().iter().flat_map(|p| p.data.iter().copied()).collect()
    }
}

#[inline]
pub fn tanh_grad<T: Scalar>(activated: T) -> T {
    T::one() - activated * activated
}

/// Fully connected layer `y = W x + b` applied frame-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    in_dim: usize,
    out_dim: usize,
}

impl<T: Scalar> Dense<T> {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let std = 1.0 / (in_dim.max(1) as f64).sqrt();
        Self {
            weight: Param::normal(format!("{name}.weight"), &[out_dim, in_dim], std, rng),
            bias: bias.then(|| Param::zeros(format!("{name}.bias"), &[out_dim])),
            in_dim,
            out_dim,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward_row(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.in_dim);
        let w = &self.weight.data;
        for (o, y) in out.iter_mut().enumerate() {
            let row = &w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = match &self.bias {
                Some(b) => b.data[o],
                None => T::zero(),
            };
            for (wi, xi) in row.iter().zip(x) {
                acc += *wi * *xi;
            }
            *y = acc;
        }
    }

    pub fn forward(&self, x: &Frames<T>) -> Frames<T> {
        assert_eq!(x.dim(), self.in_dim, "dense input width");
        let mut out = Frames::zeros(x.len(), self.out_dim);
        for i in 0..x.len() {
            self.forward_row(x.row(i), out.row_mut(i));
        }
        out
    }

    /// Backward pass for a batch of frames. Returns the input gradient and
    /// accumulates weight/bias gradients into `grads` (same layout as params).
    pub fn backward(&self, x: &Frames<T>, grad_out: &Frames<T>, grads: &mut DenseGrads<T>) -> Frames<T> {
        let mut grad_in = Frames::zeros(x.len(), self.in_dim);
        let w = &self.weight.data;
        for i in 0..x.len() {
            let xi = x.row(i);
            let go = grad_out.row(i);
            let gi = grad_in.row_mut(i);
            for o in 0..self.out_dim {
                let g = go[o];
                if g == T::zero() {
                    continue;
                }
                let wrow = &w[o * self.in_dim..(o + 1) * self.in_dim];
                let gw = &mut grads.weight[o * self.in_dim..(o + 1) * self.in_dim];
                for k in 0..self.in_dim {
                    gw[k] += g * xi[k];
                    gi[k] += g * wrow[k];
                }
                if let Some(gb) = grads.bias.as_mut() {
                    gb[o] += g;
                }
            }
        }
        grad_in
    }

    pub fn zero_grads(&self) -> DenseGrads<T> {
        DenseGrads {
            weight: vec![T::zero(); self.weight.len()],
            bias: self.bias.as_ref().map(|b| vec![T::zero(); b.len()]),
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = vec![&self.weight];
        if let Some(b) = &self.bias {
            v.push(b);
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T> {
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Scalar> DenseGrads<T> {
    pub fn into_tensors(self) -> Vec<Vec<T>> {
        let mut v = vec![self.weight];
        if let Some(b) = self.bias {
            v.push(b);
        }
        v
    }
}

/// Adam optimizer over an ordered list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, shapes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn for_params(lr: f64, params: &[&Param<T>]) -> Self {
        let shapes: Vec<usize> = params.iter().map(|p| p.len()).collect();
        Self::new(lr, &shapes)
    }

    pub fn update(&mut self, params: &mut [&mut Param<T>], grads: &[Vec<T>]) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter tensor");
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let b1 = T::lit(self.beta1);
        let b2 = T::lit(self.beta2);
        let bc1 = T::lit(1.0 - self.beta1.powi(self.step));
        let bc2 = T::lit(1.0 - self.beta2.powi(self.step));
        let lr = T::lit(self.lr);
        let eps = T::lit(self.eps);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            for i in 0..p.data.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p.data[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}
