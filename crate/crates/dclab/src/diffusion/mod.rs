//! DDPM forward process, the conditional denoiser, and its pretraining.

mod denoiser;
mod schedule;
mod train;

pub use denoiser::{Denoiser, DenoiserConfig, DenoiserRefs};
pub use schedule::NoiseSchedule;
pub use train::{train_denoiser, DenoiserTrainConfig};

use ndgrad::{Graph, Scalar, Tensor, Var};

use crate::error::{Error, Result};

/// Forward diffusion: `x_t = sqrt(a_bar_t) * x0 + sqrt(1 - a_bar_t) * eps`.
///
/// Value-level evaluation; see [`forward_diffuse_var`] for the recorded,
/// differentiable form. Both evaluate the same expression so results agree
/// bit-for-bit at a given precision.
pub fn forward_diffuse<T: Scalar>(
    x0: &Tensor<T>,
    t: u32,
    eps: &Tensor<T>,
    sched: &NoiseSchedule,
) -> Result<Tensor<T>> {
    if x0.shape() != eps.shape() {
        return Err(Error::InvalidArgument(format!(
            "forward_diffuse: x0 shape {:?} vs eps shape {:?}",
            x0.shape(),
            eps.shape()
        )));
    }
    let a = T::from_f64(sched.signal_scale(t)?);
    let b = T::from_f64(sched.noise_scale(t)?);
    let data = x0
        .data()
        .iter()
        .zip(eps.data().iter())
        .map(|(&xv, &ev)| xv * a + ev * b)
        .collect();
    Ok(Tensor::new(x0.shape().to_vec(), data)?)
}

/// Recorded forward diffusion, differentiable w.r.t. both inputs.
pub fn forward_diffuse_var<T: Scalar>(
    g: &mut Graph<T>,
    x0: Var,
    t: u32,
    eps: Var,
    sched: &NoiseSchedule,
) -> Result<Var> {
    if g.value(x0).shape() != g.value(eps).shape() {
        return Err(Error::InvalidArgument(format!(
            "forward_diffuse: x0 shape {:?} vs eps shape {:?}",
            g.value(x0).shape(),
            g.value(eps).shape()
        )));
    }
    let a = T::from_f64(sched.signal_scale(t)?);
    let b = T::from_f64(sched.noise_scale(t)?);
    let xs = g.scale(x0, a)?;
    let es = g.scale(eps, b)?;
    Ok(g.add(xs, es)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::linear(1000, 1e-4, 2e-2).unwrap()
    }

    #[test]
    fn zero_noise_scales_the_image() {
        let s = sched();
        let x0 = Tensor::<f64>::new(vec![2, 2], vec![1.0, -0.5, 0.25, 0.0]).unwrap();
        let eps = Tensor::zeros(&[2, 2]);
        let xt = forward_diffuse(&x0, 500, &eps, &s).unwrap();
        let a = s.signal_scale(500).unwrap();
        for (o, i) in xt.data().iter().zip(x0.data().iter()) {
            assert!((o - i * a).abs() < 1e-15);
        }
    }

    #[test]
    fn near_identity_at_t1_with_tiny_beta() {
        let s = NoiseSchedule::linear(1000, 1e-6, 2e-2).unwrap();
        let x0 = Tensor::<f64>::full(&[4], 0.8);
        let eps = Tensor::full(&[4], 1.0);
        let xt = forward_diffuse(&x0, 1, &eps, &s).unwrap();
        for v in xt.data() {
            assert!((v - 0.8).abs() < 2e-3, "x_1 = {v}");
        }
    }

    #[test]
    fn host_and_graph_paths_agree_bitwise() {
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x0 = Tensor::<f32>::randn(&mut rng, &[1, 16, 16]);
        let eps = Tensor::<f32>::randn(&mut rng, &[1, 16, 16]);
        let host = forward_diffuse(&x0, 321, &eps, &s).unwrap();

        let mut g = Graph::new();
        let xv = g.constant(x0);
        let ev = g.constant(eps);
        let xt = forward_diffuse_var(&mut g, xv, 321, ev, &s).unwrap();
        assert!(g.value(xt).bit_eq(&host));
    }

    #[test]
    fn affine_in_the_noise_argument() {
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x0 = Tensor::<f64>::randn(&mut rng, &[8]);
        let e1 = Tensor::<f64>::randn(&mut rng, &[8]);
        let e2 = Tensor::<f64>::randn(&mut rng, &[8]);
        let a = 0.3;

        // blend noises, then diffuse
        let mixed: Vec<f64> = e1
            .data()
            .iter()
            .zip(e2.data())
            .map(|(&u, &v)| a * u + (1.0 - a) * v)
            .collect();
        let mixed = Tensor::new(vec![8], mixed).unwrap();
        let lhs = forward_diffuse(&x0, 700, &mixed, &s).unwrap();

        // diffuse each, then blend
        let d1 = forward_diffuse(&x0, 700, &e1, &s).unwrap();
        let d2 = forward_diffuse(&x0, 700, &e2, &s).unwrap();
        for i in 0..8 {
            let rhs = a * d1.data()[i] + (1.0 - a) * d2.data()[i];
            assert!((lhs.data()[i] - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_gradient_is_the_noise_scale() {
        // d(sum(x_t))/d(eps) = sqrt(1 - alpha_bar) per coordinate
        let s = sched();
        let x0 = Tensor::<f64>::full(&[4], 0.5);
        let eps = Tensor::<f64>::full(&[4], 0.1);
        let mut g = Graph::new();
        let xv = g.constant(x0);
        let ev = g.leaf(eps, true);
        let xt = forward_diffuse_var(&mut g, xv, 500, ev, &s).unwrap();
        let loss = g.sum(xt).unwrap();
        g.backward(loss).unwrap();
        let b = s.noise_scale(500).unwrap();
        for v in g.grad(ev).unwrap().data() {
            assert!((v - b).abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_range_timestep_is_an_error() {
        let s = sched();
        let x0 = Tensor::<f64>::zeros(&[2]);
        let eps = Tensor::<f64>::zeros(&[2]);
        assert!(matches!(
            forward_diffuse(&x0, 0, &eps, &s),
            Err(Error::TimestepOutOfRange { .. })
        ));
        assert!(matches!(
            forward_diffuse(&x0, 1001, &eps, &s),
            Err(Error::TimestepOutOfRange { .. })
        ));
    }

    #[test]
    fn variance_law_holds_on_a_small_monte_carlo() {
        // Var(x_t) ~= a_bar * Var(x0) + (1 - a_bar); small version of the
        // acceptance-scale check
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x0 = Tensor::<f64>::randn(&mut rng, &[16, 16]);
        let var_x0 = {
            let m = x0.mean();
            x0.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 256.0
        };
        let t = 500;
        let a_bar = s.alpha_bar(t).unwrap();
        let expect = a_bar * var_x0 + (1.0 - a_bar);

        let draws = 2000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut n = 0usize;
        for _ in 0..draws {
            let eps = Tensor::<f64>::randn(&mut rng, &[16, 16]);
            let xt = forward_diffuse(&x0, t, &eps, &s).unwrap();
            for v in xt.data() {
                sum += v;
                sum_sq += v * v;
                n += 1;
            }
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!(
            (var - expect).abs() / expect < 0.05,
            "empirical {var} vs expected {expect}"
        );
    }
}
