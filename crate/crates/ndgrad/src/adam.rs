use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adam optimizer state for one parameter group.
///
/// Moment buffers are allocated lazily on the first step and stay congruent
/// with their parameters afterwards.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Adam with the ubiquitous defaults: beta1 0.9, beta2 0.999, eps 1e-8.
    pub fn new(lr: T) -> Result<Self> {
        Self::with_hyper(
            lr,
            T::from_f64(0.9),
            T::from_f64(0.999),
            T::from_f64(1e-8),
        )
    }

    pub fn with_hyper(lr: T, beta1: T, beta2: T, eps: T) -> Result<Self> {
        if !(lr > T::zero()) || !lr.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "adam: learning rate must be positive, got {lr}"
            )));
        }
        Ok(Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update over a parameter group.
    ///
    /// `params[i]` and `grads[i]` must be shape-congruent and the group layout
    /// must not change between calls.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(
                "adam",
                format!("{} params vs {} grads", params.len(), grads.len()),
            ));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        if self.m.len() != params.len() {
            return Err(Error::shape(
                "adam",
                format!("group has {} params, state has {}", params.len(), self.m.len()),
            ));
        }
        for ((p, g), (m, v)) in params
            .iter()
            .zip(grads.iter())
            .zip(self.m.iter().zip(self.v.iter()))
        {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::shape(
                    "adam",
                    format!("param {:?} vs grad {:?} vs moment {:?}", p.shape(), g.shape(), v.shape()),
                ));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let one = T::one();
        let bc1 = one - self.beta1.powi(t);
        let bc2 = one - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params[i].data_mut();
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (one - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (one - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] = p[j] - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            if !params[i].is_finite() {
                return Err(Error::NonFinite { op: "adam" });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nonpositive_learning_rate() {
        assert!(AdamState::<f64>::new(0.0).is_err());
        assert!(AdamState::<f64>::new(-1e-3).is_err());
    }

    #[test]
    fn first_step_moves_by_at_most_lr() {
        // bias-corrected first step is lr * g / (|g| + eps'), magnitude ~ lr
        let lr = 0.05f64;
        let mut st = AdamState::new(lr).unwrap();
        let mut p = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let g = Tensor::new(vec![3], vec![1e-3, -40.0, 7.0]).unwrap();
        let before = p.clone();
        st.step(&mut [&mut p], &[g]).unwrap();
        for (a, b) in p.data().iter().zip(before.data().iter()) {
            let delta = (a - b).abs();
            assert!(delta <= lr * (1.0 + 1e-6), "step {delta} exceeds lr {lr}");
            assert!(delta > lr * 0.9, "first step should be close to lr, got {delta}");
        }
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut st = AdamState::new(0.1f64).unwrap();
        let mut p = Tensor::new(vec![2], vec![3.0, -1.0]).unwrap();
        let before = p.clone();
        for _ in 0..5 {
            st.step(&mut [&mut p], &[Tensor::zeros(&[2])]).unwrap();
        }
        assert!(p.bit_eq(&before));
        assert_eq!(st.step_count(), 5);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(x) = (x - 3)^2, grad = 2(x - 3)
        let mut st = AdamState::new(0.1f64).unwrap();
        let mut x = Tensor::new(vec![1], vec![-4.0]).unwrap();
        for _ in 0..500 {
            let g = Tensor::new(vec![1], vec![2.0 * (x.data()[0] - 3.0)]).unwrap();
            st.step(&mut [&mut x], &[g]).unwrap();
        }
        assert!((x.data()[0] - 3.0).abs() < 1e-2, "x = {}", x.data()[0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut st = AdamState::new(0.1f64).unwrap();
        let mut p = Tensor::zeros(&[2]);
        let g = Tensor::zeros(&[3]);
        assert!(st.step(&mut [&mut p], &[g]).is_err());
    }
}
