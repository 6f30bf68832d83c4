//! Layer building blocks shared by the denoiser, the meta network, and the
//! probe classifier: plain parameter holders plus graph-handle mirrors.

use ndgrad::{BnMode, BnRunning, Graph, Scalar, Tensor, Var};
use rand::Rng;

use crate::error::Result;

fn uniform_init<T: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("finite init")
}

#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let bound = 1.0 / ((c_in * kernel * kernel) as f64).sqrt();
        Self {
            w: uniform_init(rng, &[c_out, c_in, kernel, kernel], bound),
            b: uniform_init(rng, &[c_out], bound),
            stride,
            pad,
        }
    }

    /// Zero weights and bias; used for output heads that must start as the
    /// constant-zero map.
    pub fn zeroed(c_in: usize, c_out: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            w: Tensor::zeros(&[c_out, c_in, kernel, kernel]),
            b: Tensor::zeros(&[c_out]),
            stride,
            pad,
        }
    }

    pub fn upload(&self, g: &mut Graph<T>, trainable: bool) -> Conv2dRef {
        Conv2dRef {
            w: g.leaf(self.w.clone(), trainable),
            b: g.leaf(self.b.clone(), trainable),
            stride: self.stride,
            pad: self.pad,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Conv2dRef {
    pub w: Var,
    pub b: Var,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dRef {
    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        Ok(g.conv2d(x, self.w, Some(self.b), self.stride, self.pad)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear<T: Scalar> {
    /// Stored `[in, out]` so the forward pass is a plain `x @ w`.
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, dim_in: usize, dim_out: usize) -> Self {
        let bound = 1.0 / (dim_in as f64).sqrt();
        Self {
            w: uniform_init(rng, &[dim_in, dim_out], bound),
            b: uniform_init(rng, &[dim_out], bound),
        }
    }

    pub fn upload(&self, g: &mut Graph<T>, trainable: bool) -> LinearRef {
        LinearRef {
            w: g.leaf(self.w.clone(), trainable),
            b: g.leaf(self.b.clone(), trainable),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearRef {
    pub w: Var,
    pub b: Var,
}

impl LinearRef {
    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let y = g.matmul(x, self.w)?;
        Ok(g.add_bias(y, self.b)?)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    /// Train-mode application: batch statistics, running buffers updated.
    pub fn apply_train(&mut self, g: &mut Graph<T>, x: Var, trainable: bool) -> Result<Var> {
        let gamma = g.leaf(self.gamma.clone(), trainable);
        let beta = g.leaf(self.beta.clone(), trainable);
        let momentum = T::from_f64(self.momentum);
        Ok(g.batch_norm(
            x,
            gamma,
            beta,
            BnMode::Train,
            T::from_f64(self.eps),
            BnRunning::Update {
                mean: &mut self.running_mean,
                var: &mut self.running_var,
                momentum,
            },
        )?)
    }

    /// Eval-mode application with frozen running statistics.
    pub fn apply_eval(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let gamma = g.leaf(self.gamma.clone(), false);
        let beta = g.leaf(self.beta.clone(), false);
        Ok(g.batch_norm(
            x,
            gamma,
            beta,
            BnMode::Eval,
            T::from_f64(self.eps),
            BnRunning::Frozen {
                mean: &self.running_mean,
                var: &self.running_var,
            },
        )?)
    }
}

/// Sinusoidal timestep features of even dimension `dim`.
pub fn time_embedding(t: u32, dim: usize) -> Vec<f64> {
    assert!(dim >= 2 && dim % 2 == 0, "time embedding dim must be even");
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000.0f64.ln()) * i as f64 / (half - 1).max(1) as f64).exp();
        let arg = t as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

/// Stack per-sample sinusoidal features into an `[n, dim]` tensor.
pub fn time_embedding_batch<T: Scalar>(ts: &[u32], dim: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        data.extend(time_embedding(t, dim).into_iter().map(T::from_f64));
    }
    Tensor::new(vec![ts.len(), dim], data).expect("finite embedding")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zeroed_conv_outputs_zero() {
        let conv = Conv2d::<f64>::zeroed(2, 3, 1, 1, 0);
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 2, 4, 4], 0.7));
        let r = conv.upload(&mut g, false);
        let y = r.apply(&mut g, x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_matches_manual_product() {
        let lin = Linear::<f64> {
            w: Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            b: Tensor::new(vec![2], vec![0.5, -0.5]).unwrap(),
        };
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 2], vec![2.0, 1.0]).unwrap());
        let r = lin.upload(&mut g, false);
        let y = r.apply(&mut g, x).unwrap();
        assert_eq!(g.value(y).data(), &[2.0 + 3.0 + 0.5, 4.0 + 4.0 - 0.5]);
    }

    #[test]
    fn batch_norm_train_updates_running_stats() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![2, 1, 1, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap());
        let _ = bn.apply_train(&mut g, x, false).unwrap();
        // batch mean 4, biased var 5; momentum 0.1 from (0, 1)
        assert!((bn.running_mean.data()[0] - 0.4).abs() < 1e-12);
        assert!((bn.running_var.data()[0] - (0.9 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn time_embedding_is_deterministic_and_bounded() {
        let a = time_embedding(500, 32);
        let b = time_embedding(500, 32);
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
        let c = time_embedding(501, 32);
        assert_ne!(a, c);
    }

    #[test]
    fn conv_init_is_seed_deterministic() {
        let a = Conv2d::<f32>::new(&mut ChaCha8Rng::seed_from_u64(3), 1, 4, 3, 1, 1);
        let b = Conv2d::<f32>::new(&mut ChaCha8Rng::seed_from_u64(3), 1, 4, 3, 1, 1);
        assert!(a.w.bit_eq(&b.w) && a.b.bit_eq(&b.b));
    }
}
