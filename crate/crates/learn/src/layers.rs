//! Trainable tensors and the dense building blocks with hand-written backward passes.
//!
//! Activations are row-major `[rows, features]` slices. Every `backward` accumulates
//! into the parameter gradients and returns the gradient of its input.

use rand::Rng;

use crate::scalar::{matmul, matmul_at, matmul_bt, Scalar};

/// A named-by-owner trainable tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), value: vec![T::zero(); n], grad: vec![T::zero(); n] }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        let mut p = Self::zeros(shape);
        p.value.fill(v);
        p
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(shape);
        for v in &mut p.value {
            *v = T::lit(rng.random_range(-bound..=bound));
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Collects `(name, param)` pairs in a fixed order.
pub type ParamList<'a, T> = Vec<(String, &'a Param<T>)>;
pub type ParamListMut<'a, T> = Vec<(String, &'a mut Param<T>)>;

/// `y = x·W + b` with `W: [in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Linear<T> {
    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn new(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self { weight: Param::uniform(&[fan_in, fan_out], bound, rng), bias: Param::uniform(&[fan_out], bound, rng) }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn forward(&self, x: &[T], rows: usize) -> Vec<T> {
        let (i, o) = (self.fan_in(), self.fan_out());
        let mut y = Vec::with_capacity(rows * o);
        for _ in 0..rows {
            y.extend_from_slice(&self.bias.value);
        }
        matmul(x, &self.weight.value, &mut y, rows, i, o, true);
        y
    }

    pub fn backward(&mut self, x: &[T], dy: &[T], rows: usize) -> Vec<T> {
        let (i, o) = (self.fan_in(), self.fan_out());
        self.accumulate_grads(x, dy, rows);
        let mut dx = vec![T::zero(); rows * i];
        matmul_bt(dy, &self.weight.value, &mut dx, rows, o, i, false);
        dx
    }

    /// Parameter gradients only, for inputs that need no gradient.
    pub fn accumulate_grads(&mut self, x: &[T], dy: &[T], rows: usize) {
        let (i, o) = (self.fan_in(), self.fan_out());
        matmul_at(x, dy, &mut self.weight.grad, i, rows, o, true);
        for r in 0..rows {
            for (g, d) in self.bias.grad.iter_mut().zip(&dy[r * o..(r + 1) * o]) {
                *g += *d;
            }
        }
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut ParamList<'a, T>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamListMut<'a, T>) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
}

/// Normalized input and inverse standard deviation per row.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        Self { gamma: Param::filled(&[dim], T::one()), beta: Param::zeros(&[dim]) }
    }

    pub fn forward(&self, x: &[T], rows: usize) -> (Vec<T>, LayerNormCache<T>) {
        let d = self.gamma.len();
        let inv_d = T::lit(1.0 / d as f64);
        let eps = T::lit(LAYER_NORM_EPS);
        let mut y = vec![T::zero(); rows * d];
        let mut xhat = vec![T::zero(); rows * d];
        let mut rstd = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() * inv_d;
            let s = T::one() / (var + eps).sqrt();
            rstd[r] = s;
            for j in 0..d {
                let h = (row[j] - mean) * s;
                xhat[r * d + j] = h;
                y[r * d + j] = h * self.gamma.value[j] + self.beta.value[j];
            }
        }
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn backward(&mut self, cache: &LayerNormCache<T>, dy: &[T], rows: usize) -> Vec<T> {
        let d = self.gamma.len();
        let inv_d = T::lit(1.0 / d as f64);
        let mut dx = vec![T::zero(); rows * d];
        for r in 0..rows {
            let xh = &cache.xhat[r * d..(r + 1) * d];
            let g = &dy[r * d..(r + 1) * d];
            let mut sum_dh = T::zero();
            let mut sum_dh_xh = T::zero();
            for j in 0..d {
                self.gamma.grad[j] += g[j] * xh[j];
                self.beta.grad[j] += g[j];
                let dh = g[j] * self.gamma.value[j];
                sum_dh += dh;
                sum_dh_xh += dh * xh[j];
            }
            let s = cache.rstd[r];
            for j in 0..d {
                let dh = g[j] * self.gamma.value[j];
                dx[r * d + j] = s * (dh - inv_d * sum_dh - xh[j] * inv_d * sum_dh_xh);
            }
        }
        dx
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut ParamList<'a, T>) {
        out.push((format!("{prefix}.gamma"), &self.gamma));
        out.push((format!("{prefix}.beta"), &self.beta));
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamListMut<'a, T>) {
        out.push((format!("{prefix}.gamma"), &mut self.gamma));
        out.push((format!("{prefix}.beta"), &mut self.beta));
    }
}

/// Inverted dropout: kept entries are scaled by `1/(1-p)`. The returned mask holds the
/// per-entry multiplier and is reused in the backward pass.
pub fn dropout<T: Scalar>(x: &mut [T], p: f64, rng: &mut impl Rng) -> Vec<T> {
    let keep = T::lit(1.0 / (1.0 - p));
    let threshold = (p * u32::MAX as f64) as u32;
    let mask: Vec<T> = (0..x.len()).map(|_| if rng.random::<u32>() < threshold { T::zero() } else { keep }).collect();
    for (v, m) in x.iter_mut().zip(&mask) {
        *v *= *m;
    }
    mask
}

pub fn apply_mask<T: Scalar>(x: &mut [T], mask: Option<&Vec<T>>) {
    if let Some(mask) = mask {
        for (v, m) in x.iter_mut().zip(mask) {
            *v *= *m;
        }
    }
}

pub fn relu_in_place<T: Scalar>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes gradient entries where the ReLU output was not positive.
pub fn relu_backward<T: Scalar>(out: &[T], grad: &mut [T]) {
    for (g, o) in grad.iter_mut().zip(out) {
        if *o <= T::zero() {
            *g = T::zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_forward_adds_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut lin = Linear::<f64>::new(2, 3, &mut rng);
        lin.weight.value = vec![1.0, 0.0, 2.0, 0.0, 1.0, 3.0];
        lin.bias.value = vec![0.5, -0.5, 0.0];
        assert_eq!(lin.forward(&[1.0, 2.0], 1), vec![1.5, 1.5, 8.0]);
    }

    #[test]
    fn layer_norm_output_is_standardized() {
        let ln = LayerNorm::<f64>::new(4);
        let (y, _) = ln.forward(&[1.0, 2.0, 3.0, 4.0, -1.0, -1.0, 5.0, 9.0], 2);
        for r in 0..2 {
            let row = &y[r * 4..(r + 1) * 4];
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn layer_norm_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ln = LayerNorm::<f64>::new(5);
        ln.gamma = Param::uniform(&[5], 1.0, &mut rng);
        let x: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
        let w: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |ln: &LayerNorm<f64>, x: &[f64]| ln.forward(x, 2).0.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let (_, cache) = ln.forward(&x, 2);
        let dx = ln.backward(&cache, &w, 2);
        for i in 0..10 {
            let mut xp = x.clone();
            xp[i] += 1e-6;
            let mut xm = x.clone();
            xm[i] -= 1e-6;
            let fd = (loss(&ln, &xp) - loss(&ln, &xm)) / 2e-6;
            assert!((fd - dx[i]).abs() < 1e-6, "{i}: {fd} vs {}", dx[i]);
        }
    }

    #[test]
    fn dropout_rate_and_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = vec![1.0f64; 100_000];
        let mask = dropout(&mut x, 0.1, &mut rng);
        let dropped = mask.iter().filter(|m| **m == 0.0).count() as f64 / 1e5;
        assert!((dropped - 0.1).abs() < 0.01);
        assert!(x.iter().all(|v| *v == 0.0 || (*v - 1.0 / 0.9).abs() < 1e-12));
    }
}
