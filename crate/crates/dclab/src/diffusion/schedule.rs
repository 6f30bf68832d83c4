use crate::error::{Error, Result};

/// Timestep-indexed noise level table for the forward process.
///
/// Betas interpolate linearly from `beta_start` to `beta_end` inclusive;
/// `alpha_bar[t]` is the running product of `(1 - beta)`. Timesteps are
/// 1-based, matching the convention that `t = 0` is the clean image.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    timesteps: u32,
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(timesteps: u32, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps == 0 {
            return Err(Error::InvalidArgument("schedule needs >= 1 timestep".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "beta range must satisfy 0 < start <= end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let n = timesteps as usize;
        let mut betas = Vec::with_capacity(n);
        for i in 0..n {
            let frac = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
            betas.push(beta_start + frac * (beta_end - beta_start));
        }
        let mut alpha_bar = Vec::with_capacity(n);
        let mut prod = 1.0;
        for &beta in &betas {
            prod *= 1.0 - beta;
            alpha_bar.push(prod);
        }
        debug_assert!(alpha_bar.windows(2).all(|w| w[1] < w[0]));
        debug_assert!(alpha_bar.iter().all(|&a| a > 0.0 && a < 1.0));
        Ok(Self {
            timesteps,
            betas,
            alpha_bar,
        })
    }

    pub fn timesteps(&self) -> u32 {
        self.timesteps
    }

    fn index(&self, t: u32) -> Result<usize> {
        if t == 0 || t > self.timesteps {
            return Err(Error::TimestepOutOfRange {
                t,
                max: self.timesteps,
            });
        }
        Ok((t - 1) as usize)
    }

    pub fn beta(&self, t: u32) -> Result<f64> {
        Ok(self.betas[self.index(t)?])
    }

    pub fn alpha_bar(&self, t: u32) -> Result<f64> {
        Ok(self.alpha_bar[self.index(t)?])
    }

    /// `sqrt(alpha_bar_t)`, the signal coefficient of the forward process.
    pub fn signal_scale(&self, t: u32) -> Result<f64> {
        Ok(self.alpha_bar(t)?.sqrt())
    }

    /// `sqrt(1 - alpha_bar_t)`, the noise coefficient of the forward process.
    pub fn noise_scale(&self, t: u32) -> Result<f64> {
        Ok((1.0 - self.alpha_bar(t)?).sqrt())
    }
}
