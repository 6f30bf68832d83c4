//! 2-D discrete Fourier analysis and noise statistics.
//!
//! The transform is the direct O(M^2 N^2) double sum; at the image sizes in
//! this crate that is both fast enough and trivially exact, and the spectral
//! verification suites run at 64-bit where round-trip and Parseval hold to
//! 1e-9.

use ndgrad::{Scalar, Tensor};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Complex spectrum of an M x N real image, bin (0, 0) at the DC term.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub rows: usize,
    pub cols: usize,
    pub bins: Vec<Complex64>,
}

impl Spectrum {
    pub fn bin(&self, u: usize, v: usize) -> Complex64 {
        self.bins[u * self.cols + v]
    }

    /// Total spectral energy, `sum |F|^2`.
    pub fn energy(&self) -> f64 {
        self.bins.iter().map(|c| c.norm_sqr()).sum()
    }
}

fn as_2d<T: Scalar>(img: &Tensor<T>) -> Result<(usize, usize, Vec<f64>)> {
    let (rows, cols) = match img.shape() {
        [h, w] => (*h, *w),
        [1, h, w] => (*h, *w),
        s => {
            return Err(Error::InvalidArgument(format!(
                "expected a 2-D image (or [1, h, w]), got {s:?}"
            )))
        }
    };
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    Ok((rows, cols, img.data().iter().map(|v| v.as_f64()).collect()))
}

/// Discrete Fourier transform of a real image:
/// `F(u,v) = sum_xy f(x,y) exp(-2 pi i (ux/M + vy/N))`.
pub fn dft2<T: Scalar>(img: &Tensor<T>) -> Result<Spectrum> {
    let (rows, cols, data) = as_2d(img)?;
    let mut bins = vec![Complex64::new(0.0, 0.0); rows * cols];
    for u in 0..rows {
        for v in 0..cols {
            let mut acc = Complex64::new(0.0, 0.0);
            for x in 0..rows {
                for y in 0..cols {
                    let phase = -2.0 * std::f64::consts::PI
                        * (u as f64 * x as f64 / rows as f64 + v as f64 * y as f64 / cols as f64);
                    acc += data[x * cols + y] * Complex64::new(phase.cos(), phase.sin());
                }
            }
            bins[u * cols + v] = acc;
        }
    }
    Ok(Spectrum { rows, cols, bins })
}

/// Inverse transform including the 1/(MN) factor; returns the real part
/// (exact for spectra of real images, whose imaginary part vanishes).
pub fn idft2(spec: &Spectrum) -> Tensor<f64> {
    let data: Vec<f64> = idft2_complex(spec).into_iter().map(|c| c.re).collect();
    Tensor::new(vec![spec.rows, spec.cols], data).expect("finite inverse transform")
}

/// Full complex inverse transform.
pub fn idft2_complex(spec: &Spectrum) -> Vec<Complex64> {
    let (rows, cols) = (spec.rows, spec.cols);
    let norm = 1.0 / (rows * cols) as f64;
    let mut out = vec![Complex64::new(0.0, 0.0); rows * cols];
    for x in 0..rows {
        for y in 0..cols {
            let mut acc = Complex64::new(0.0, 0.0);
            for u in 0..rows {
                for v in 0..cols {
                    let phase = 2.0 * std::f64::consts::PI
                        * (u as f64 * x as f64 / rows as f64 + v as f64 * y as f64 / cols as f64);
                    acc += spec.bins[u * cols + v] * Complex64::new(phase.cos(), phase.sin());
                }
            }
            out[x * cols + y] = acc * norm;
        }
    }
    out
}

/// Signed centered frequency offset of bin index `u` on an axis of length
/// `m`: 0 is DC, the Nyquist bin (even `m`) maps to m/2.
fn centered_offset(u: usize, m: usize) -> f64 {
    if u <= m / 2 {
        u as f64
    } else {
        u as f64 - m as f64
    }
}

/// Fraction of spectral energy beyond a radial cutoff in the centered
/// spectrum. Distances are Euclidean over centered bin offsets, normalized
/// so the farthest corner bin sits at 1; a bin is high-frequency iff its
/// normalized distance exceeds `cutoff`. The DC bin is always low-frequency.
/// Returns 0 for an all-zero image. Multichannel inputs average the
/// per-channel ratios.
pub fn high_freq_ratio<T: Scalar>(img: &Tensor<T>, cutoff: f64) -> Result<f64> {
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "cutoff must be in (0, 1), got {cutoff}"
        )));
    }
    if let [c, h, w] = img.shape() {
        if *c > 1 {
            let mut acc = 0.0;
            for ch in 0..*c {
                let plane = Tensor::new(
                    vec![*h, *w],
                    img.data()[ch * h * w..(ch + 1) * h * w].to_vec(),
                )?;
                acc += high_freq_ratio(&plane, cutoff)?;
            }
            return Ok(acc / *c as f64);
        }
    }
    let spec = dft2(img)?;
    let (rows, cols) = (spec.rows, spec.cols);
    let max_du = (rows / 2) as f64;
    let max_dv = (cols / 2) as f64;
    let max_dist = (max_du * max_du + max_dv * max_dv).sqrt();
    if max_dist == 0.0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let mut high = 0.0;
    for u in 0..rows {
        for v in 0..cols {
            let du = centered_offset(u, rows);
            let dv = centered_offset(v, cols);
            let dist = (du * du + dv * dv).sqrt() / max_dist;
            let e = spec.bin(u, v).norm_sqr();
            total += e;
            if dist > cutoff && (u, v) != (0, 0) {
                high += e;
            }
        }
    }
    if total == 0.0 {
        return Ok(0.0);
    }
    Ok(high / total)
}

/// Mean, biased variance, and standard-normal log-density of a tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseStats {
    pub mean: f64,
    pub variance: f64,
    /// log N(x; 0, I) = -(d/2) ln(2 pi) - (1/2) sum x^2
    pub log_pdf: f64,
}

pub fn noise_stats<T: Scalar>(eps: &Tensor<T>) -> Result<NoiseStats> {
    if eps.is_empty() {
        return Err(Error::InvalidArgument("noise_stats on an empty tensor".into()));
    }
    let d = eps.len() as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for v in eps.data() {
        let x = v.as_f64();
        sum += x;
        sum_sq += x * x;
    }
    let mean = sum / d;
    let variance = sum_sq / d - mean * mean;
    let log_pdf = -(d / 2.0) * (2.0 * std::f64::consts::PI).ln() - 0.5 * sum_sq;
    Ok(NoiseStats {
        mean,
        variance,
        log_pdf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn delta_transforms_to_all_ones() {
        let mut data = vec![0.0f64; 64];
        data[0] = 1.0;
        let img = Tensor::new(vec![8, 8], data).unwrap();
        let spec = dft2(&img).unwrap();
        for b in &spec.bins {
            assert!((b.re - 1.0).abs() < 1e-12 && b.im.abs() < 1e-12);
        }
    }

    #[test]
    fn constant_image_is_dc_only() {
        let img = Tensor::full(&[4, 6], 0.7f64);
        let spec = dft2(&img).unwrap();
        assert!((spec.bin(0, 0).re - 24.0 * 0.7).abs() < 1e-12);
        assert!(spec.bin(0, 0).im.abs() < 1e-12);
        for u in 0..4 {
            for v in 0..6 {
                if (u, v) != (0, 0) {
                    assert!(spec.bin(u, v).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn round_trip_within_1e9() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &n in &[8usize, 16] {
            let img = Tensor::<f64>::randn(&mut rng, &[n, n]);
            let back = idft2(&dft2(&img).unwrap());
            assert!(img.max_abs_diff(&back) < 1e-9);
        }
    }

    #[test]
    fn spectrum_round_trip_within_1e9() {
        // dft2(idft2(S)) = S for spectra of real images
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = Tensor::<f64>::randn(&mut rng, &[8, 8]);
        let spec = dft2(&img).unwrap();
        let spec2 = dft2(&idft2(&spec)).unwrap();
        for (a, b) in spec.bins.iter().zip(spec2.bins.iter()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn zero_spectrum_inverts_to_zero_image() {
        let spec = Spectrum {
            rows: 4,
            cols: 4,
            bins: vec![Complex64::new(0.0, 0.0); 16],
        };
        let img = idft2(&spec);
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn all_ones_spectrum_inverts_to_delta() {
        let spec = Spectrum {
            rows: 8,
            cols: 8,
            bins: vec![Complex64::new(1.0, 0.0); 64],
        };
        let img = idft2(&spec);
        assert!((img.data()[0] - 1.0).abs() < 1e-12);
        for &v in &img.data()[1..] {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn parseval_holds_at_1e9() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &n in &[8usize, 16] {
            let img = Tensor::<f64>::randn(&mut rng, &[n, n]);
            let spatial: f64 = img.data().iter().map(|v| v * v).sum();
            let spec = dft2(&img).unwrap();
            let spectral = spec.energy() / (n * n) as f64;
            assert!(
                (spatial - spectral).abs() < 1e-9,
                "Parseval: {spatial} vs {spectral}"
            );
        }
    }

    #[test]
    fn conjugate_symmetry_for_real_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = Tensor::<f64>::randn(&mut rng, &[8, 8]);
        let spec = dft2(&img).unwrap();
        for u in 0..8 {
            for v in 0..8 {
                let a = spec.bin(u, v);
                let b = spec.bin((8 - u) % 8, (8 - v) % 8).conj();
                assert!((a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn linearity_of_the_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::randn(&mut rng, &[8, 8]);
        let y = Tensor::<f64>::randn(&mut rng, &[8, 8]);
        let (a, b) = (1.7, -0.4);
        let mixed: Vec<f64> = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&u, &v)| a * u + b * v)
            .collect();
        let mixed = Tensor::new(vec![8, 8], mixed).unwrap();
        let sm = dft2(&mixed).unwrap();
        let sx = dft2(&x).unwrap();
        let sy = dft2(&y).unwrap();
        for i in 0..64 {
            let expect = a * sx.bins[i] + b * sy.bins[i];
            assert!((sm.bins[i] - expect).norm() < 1e-9);
        }
    }

    #[test]
    fn constant_image_has_zero_high_frequency_ratio() {
        let img = Tensor::full(&[16, 16], -0.3f64);
        assert_eq!(high_freq_ratio(&img, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn nyquist_checkerboard_is_all_high_frequency() {
        let mut data = vec![0.0f64; 256];
        for x in 0..16 {
            for y in 0..16 {
                data[x * 16 + y] = if (x + y) % 2 == 0 { 1.0 } else { -1.0 };
            }
        }
        let img = Tensor::new(vec![16, 16], data).unwrap();
        let r = high_freq_ratio(&img, 0.3).unwrap();
        assert!(r >= 0.999, "checkerboard ratio = {r}");
    }

    #[test]
    fn ratio_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let img = Tensor::<f64>::randn(&mut rng, &[16, 16]);
        let r1 = high_freq_ratio(&img, 0.3).unwrap();
        for &c in &[2.0, -0.5, 1e-3] {
            let scaled: Vec<f64> = img.data().iter().map(|v| v * c).collect();
            let scaled = Tensor::new(vec![16, 16], scaled).unwrap();
            let r2 = high_freq_ratio(&scaled, 0.3).unwrap();
            assert!((r1 - r2).abs() < 1e-9);
        }
    }

    #[test]
    fn all_zero_image_has_ratio_zero() {
        let img = Tensor::<f64>::zeros(&[16, 16]);
        assert_eq!(high_freq_ratio(&img, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn invalid_cutoff_is_rejected() {
        let img = Tensor::<f64>::zeros(&[8, 8]);
        assert!(high_freq_ratio(&img, 0.0).is_err());
        assert!(high_freq_ratio(&img, 1.0).is_err());
    }

    #[test]
    fn stats_closed_form_for_zeros() {
        let d = 64.0f64;
        let s = noise_stats(&Tensor::<f64>::zeros(&[8, 8])).unwrap();
        assert_eq!(s.mean, 0.0);
        assert_eq!(s.variance, 0.0);
        assert!((s.log_pdf - (-(d / 2.0) * (2.0 * std::f64::consts::PI).ln())).abs() < 1e-12);
    }

    #[test]
    fn stats_shift_moves_mean_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::<f64>::randn(&mut rng, &[10, 10]);
        let s1 = noise_stats(&x).unwrap();
        let shifted: Vec<f64> = x.data().iter().map(|v| v + 2.5).collect();
        let s2 = noise_stats(&Tensor::new(vec![10, 10], shifted).unwrap()).unwrap();
        assert!((s2.mean - (s1.mean + 2.5)).abs() < 1e-9);
        assert!((s2.variance - s1.variance).abs() < 1e-9);
    }

    #[test]
    fn gaussian_draws_have_sane_aggregate_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut means = 0.0;
        let mut vars = 0.0;
        let n = 100;
        for _ in 0..n {
            let x = Tensor::<f64>::randn(&mut rng, &[16, 16]);
            let s = noise_stats(&x).unwrap();
            means += s.mean;
            vars += s.variance;
            assert!((-0.4..0.4).contains(&s.mean));
            assert!((0.55..1.45).contains(&s.variance));
        }
        assert!((means / n as f64).abs() < 0.05);
        assert!((vars / n as f64 - 1.0).abs() < 0.05);
    }

    #[test]
    fn empty_tensor_is_an_error() {
        let t = Tensor::<f64>::zeros(&[0]);
        assert!(noise_stats(&t).is_err());
    }
}
