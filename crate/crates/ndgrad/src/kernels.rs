//! Inner loops shared by the graph ops: GEMM variants and im2col/col2im.
//!
//! All kernels accumulate into their output slice so callers control
//! zero-initialization, and all iterate in a fixed order so results are
//! bit-reproducible for a given element type.

use crate::scalar::Scalar;

/// c[m,n] += a[m,k] * b[k,n]
pub fn matmul_nn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow.iter()) {
                *cj += aip * bj;
            }
        }
    }
}

/// c[m,n] += a[m,k] * b[n,k]^T  (dot products of rows)
pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cj) in crow.iter_mut().enumerate() {
            *cj += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// Dot product with a fixed lane-parallel accumulation order, so the single
/// reduction chain does not defeat vectorization.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    const LANES: usize = 8;
    let mut acc = [T::zero(); LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for l in 0..LANES {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut s = T::zero();
    for l in 0..LANES {
        s += acc[l];
    }
    for (&xa, &xb) in ca.remainder().iter().zip(cb.remainder().iter()) {
        s += xa * xb;
    }
    s
}

/// c[m,n] += a[k,m]^T * b[k,n]
pub fn matmul_tn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &api) in arow.iter().enumerate() {
            let crow = &mut c[i * n..(i + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow.iter()) {
                *cj += api * bj;
            }
        }
    }
}

/// Geometry of one 2-D convolution.
#[derive(Debug, Clone, Copy)]
pub struct ConvShape {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvShape {
    pub fn new(
        c_in: usize,
        h: usize,
        w: usize,
        c_out: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        if stride == 0 || kh == 0 || kw == 0 {
            return None;
        }
        let hp = h + 2 * pad;
        let wp = w + 2 * pad;
        if hp < kh || wp < kw {
            return None;
        }
        Some(Self {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad,
            h_out: (hp - kh) / stride + 1,
            w_out: (wp - kw) / stride + 1,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.h_out * self.w_out
    }
}

/// y += alpha * x
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yv, &xv) in y.iter_mut().zip(x.iter()) {
        *yv += alpha * xv;
    }
}

/// Unfold one sample `x` (c_in*h*w) into position-major columns:
/// `colt[p * col_rows + r]` holds tap `r` of output position `p`, with
/// zero padding for out-of-range taps. Overwrites `colt`.
///
/// Position-major layout keeps every GEMM inner loop at length
/// `col_rows = c_in*kh*kw`, which stays large even on tiny feature maps.
pub fn im2col_t<T: Scalar>(x: &[T], colt: &mut [T], s: &ConvShape) {
    debug_assert_eq!(x.len(), s.c_in * s.h * s.w);
    debug_assert_eq!(colt.len(), s.col_rows() * s.col_cols());
    let rows = s.col_rows();
    let khw = s.kh * s.kw;
    for ho in 0..s.h_out {
        for wo in 0..s.w_out {
            let p = ho * s.w_out + wo;
            let dst = &mut colt[p * rows..(p + 1) * rows];
            for ci in 0..s.c_in {
                let plane = &x[ci * s.h * s.w..(ci + 1) * s.h * s.w];
                let d = &mut dst[ci * khw..(ci + 1) * khw];
                for ki in 0..s.kh {
                    let ih = (ho * s.stride + ki) as isize - s.pad as isize;
                    let drow = &mut d[ki * s.kw..(ki + 1) * s.kw];
                    if ih < 0 || ih >= s.h as isize {
                        for v in drow.iter_mut() {
                            *v = T::zero();
                        }
                        continue;
                    }
                    let xrow = &plane[ih as usize * s.w..(ih as usize + 1) * s.w];
                    for (kj, v) in drow.iter_mut().enumerate() {
                        let iw = (wo * s.stride + kj) as isize - s.pad as isize;
                        *v = if iw < 0 || iw >= s.w as isize {
                            T::zero()
                        } else {
                            xrow[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col_t`]: scatter-add position-major columns back into
/// `dx` (c_in*h*w).
pub fn col2im_t_add<T: Scalar>(colt: &[T], dx: &mut [T], s: &ConvShape) {
    debug_assert_eq!(dx.len(), s.c_in * s.h * s.w);
    debug_assert_eq!(colt.len(), s.col_rows() * s.col_cols());
    let rows = s.col_rows();
    let khw = s.kh * s.kw;
    for ho in 0..s.h_out {
        for wo in 0..s.w_out {
            let p = ho * s.w_out + wo;
            let src = &colt[p * rows..(p + 1) * rows];
            for ci in 0..s.c_in {
                let plane = &mut dx[ci * s.h * s.w..(ci + 1) * s.h * s.w];
                let srcc = &src[ci * khw..(ci + 1) * khw];
                for ki in 0..s.kh {
                    let ih = (ho * s.stride + ki) as isize - s.pad as isize;
                    if ih < 0 || ih >= s.h as isize {
                        continue;
                    }
                    let prow = &mut plane[ih as usize * s.w..(ih as usize + 1) * s.w];
                    for (kj, &v) in srcc[ki * s.kw..(ki + 1) * s.kw].iter().enumerate() {
                        let iw = (wo * s.stride + kj) as isize - s.pad as isize;
                        if iw >= 0 && (iw as usize) < s.w {
                            prow[iw as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// out[c, p] = dot(w[c, :], colt[p, :]) + bias[c]; one conv forward sample.
pub fn conv_forward_sample<T: Scalar>(
    w: &[T],
    colt: &[T],
    bias: Option<&[T]>,
    out: &mut [T],
    s: &ConvShape,
) {
    let rows = s.col_rows();
    let cols = s.col_cols();
    debug_assert_eq!(w.len(), s.c_out * rows);
    debug_assert_eq!(out.len(), s.c_out * cols);
    for c in 0..s.c_out {
        let wrow = &w[c * rows..(c + 1) * rows];
        let b = bias.map_or(T::zero(), |bv| bv[c]);
        let orow = &mut out[c * cols..(c + 1) * cols];
        for (p, o) in orow.iter_mut().enumerate() {
            *o = dot(wrow, &colt[p * rows..(p + 1) * rows]) + b;
        }
    }
}

/// dw[c, :] += sum_p g[c, p] * colt[p, :]; one conv weight-gradient sample.
pub fn conv_grad_w_sample<T: Scalar>(g: &[T], colt: &[T], dw: &mut [T], s: &ConvShape) {
    let rows = s.col_rows();
    let cols = s.col_cols();
    debug_assert_eq!(dw.len(), s.c_out * rows);
    for c in 0..s.c_out {
        let grow = &g[c * cols..(c + 1) * cols];
        let drow = &mut dw[c * rows..(c + 1) * rows];
        for (p, &gv) in grow.iter().enumerate() {
            axpy(gv, &colt[p * rows..(p + 1) * rows], drow);
        }
    }
}

/// colt_grad[p, :] = sum_c g[c, p] * w[c, :]; input-gradient columns of one
/// sample, ready for [`col2im_t_add`]. Overwrites `colt_grad`.
pub fn conv_grad_cols_sample<T: Scalar>(g: &[T], w: &[T], colt_grad: &mut [T], s: &ConvShape) {
    let rows = s.col_rows();
    let cols = s.col_cols();
    debug_assert_eq!(colt_grad.len(), rows * cols);
    colt_grad.iter_mut().for_each(|v| *v = T::zero());
    for c in 0..s.c_out {
        let wrow = &w[c * rows..(c + 1) * rows];
        let grow = &g[c * cols..(c + 1) * cols];
        for (p, &gv) in grow.iter().enumerate() {
            axpy(gv, wrow, &mut colt_grad[p * rows..(p + 1) * rows]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_nn_known_product() {
        // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        matmul_nn(&a, &b, &mut c, 2, 2, 2);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_variants_agree_on_transposed_layouts() {
        let a = [1.0f64, -2.0, 0.5, 3.0, 4.0, -1.0]; // 2x3
        let b = [2.0f64, 1.0, 0.0, -1.0, 1.5, 2.0]; // 3x2
        let mut c_nn = [0.0f64; 4];
        matmul_nn(&a, &b, &mut c_nn, 2, 3, 2);

        // b_t is b^T stored 2x3 so matmul_nt(a, b_t) == a * b
        let b_t = [2.0f64, 0.0, 1.5, 1.0, -1.0, 2.0];
        let mut c_nt = [0.0f64; 4];
        matmul_nt(&a, &b_t, &mut c_nt, 2, 3, 2);
        assert_eq!(c_nn, c_nt);

        // a_t is a^T stored 3x2 so matmul_tn(a_t, b) == a * b
        let a_t = [1.0f64, 3.0, -2.0, 4.0, 0.5, -1.0];
        let mut c_tn = [0.0f64; 4];
        matmul_tn(&a_t, &b, &mut c_tn, 2, 3, 2);
        assert_eq!(c_nn, c_tn);
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <col, im2col(x)> == <col2im(col), x> for random-ish fills.
        let s = ConvShape::new(2, 5, 4, 1, 3, 3, 2, 1).unwrap();
        let x: Vec<f64> = (0..s.c_in * s.h * s.w).map(|i| (i as f64) * 0.37 - 3.0).collect();
        let mut col = vec![0.0f64; s.col_rows() * s.col_cols()];
        im2col_t(&x, &mut col, &s);

        let probe: Vec<f64> = (0..col.len()).map(|i| ((i * 7 % 13) as f64) - 6.0).collect();
        let lhs: f64 = col.iter().zip(probe.iter()).map(|(a, b)| a * b).sum();

        let mut back = vec![0.0f64; x.len()];
        col2im_t_add(&probe, &mut back, &s);
        let rhs: f64 = back.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "lhs={lhs} rhs={rhs}");
    }

    #[test]
    fn conv_forward_sample_matches_direct_sum() {
        // 1x3x3 ones image, 3x3 ones kernel, pad 1: center output is 9
        let s = ConvShape::new(1, 3, 3, 1, 3, 3, 1, 1).unwrap();
        let x = vec![1.0f64; 9];
        let w = vec![1.0f64; 9];
        let mut colt = vec![0.0f64; s.col_rows() * s.col_cols()];
        im2col_t(&x, &mut colt, &s);
        let mut out = vec![0.0f64; 9];
        conv_forward_sample(&w, &colt, None, &mut out, &s);
        assert_eq!(out[4], 9.0);
        assert_eq!(out[0], 4.0);
        assert_eq!(out[1], 6.0);
    }
}
