//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every primitive operation in construction order, which
//! is already a topological order, so [`Graph::backward`] is a single reverse
//! sweep over the tape. Gradients are only allocated along subpaths that reach
//! a `requires_grad` leaf; everything else is evaluated but never
//! differentiated, so running a frozen network under a graph costs only the
//! forward pass.

use crate::error::{Error, Result};
use crate::kernels::{
    col2im_t_add, conv_forward_sample, conv_grad_cols_sample, conv_grad_w_sample, im2col_t,
    matmul_nn, matmul_nt, matmul_tn, ConvShape,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`]. Only valid for the graph that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Batch-norm statistics mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

#[derive(Debug)]
enum Op<T: Scalar> {
    Leaf {
        requires_grad: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Shift(Var),
    MatMul(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        shape: ConvShape,
    },
    Upsample2x(Var),
    Relu(Var),
    Silu(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode,
        // statistics used at forward time: batch stats for Train,
        // running stats for Eval
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    Embedding {
        table: Var,
        indices: Vec<usize>,
    },
    ConcatChannels(Var, Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SqDiff(Var, Var),
    LogSumExp(Var),
    Pick {
        x: Var,
        indices: Vec<usize>,
    },
    Zscore {
        x: Var,
        sigma: Vec<T>, // per-row population std, before the guard term
    },
    Reshape(Var),
    RepeatRows {
        x: Var,
        copies: usize,
    },
    AddChanBias {
        x: Var,
        b: Var,
    },
    AddBias {
        x: Var,
        b: Var,
    },
    StackScalars(Vec<Var>),
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Additive guard on the z-score denominator; keeps degenerate
/// (zero-variance) logit rows finite with zero gradient.
pub const ZSCORE_GUARD: f64 = 1e-12;

/// Recorded computation over [`Tensor`]s.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Insert a tensor as a graph input.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        let needs_grad = requires_grad;
        self.nodes.push(Node {
            value,
            op: Op::Leaf { requires_grad },
            needs_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Insert a tensor that never receives gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` loss w.r.t. a `requires_grad` leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn check_open(&self) -> Result<()> {
        if self.consumed {
            Err(Error::GraphConsumed)
        } else {
            Ok(())
        }
    }

    fn push(
        &mut self,
        opname: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        op: Op<T>,
        needs_grad: bool,
    ) -> Result<Var> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: opname });
        }
        self.nodes.push(Node {
            value: Tensor::from_raw(shape, data),
            op,
            needs_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    // ---- elementwise and scalar ops -------------------------------------

    fn binary_same_shape(
        &mut self,
        opname: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        self.check_open()?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() {
            return Err(Error::shape(
                opname,
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data().iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = va.shape().to_vec();
        let needs = self.needs(&[a, b]);
        self.push(opname, shape, data, op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.check_open()?;
        if !c.is_finite() {
            return Err(Error::InvalidArgument("scale: non-finite factor".into()));
        }
        let va = &self.nodes[a.0].value;
        let data = va.data().iter().map(|&x| x * c).collect();
        let shape = va.shape().to_vec();
        let needs = self.needs(&[a]);
        self.push("scale", shape, data, Op::Scale(a, c), needs)
    }

    pub fn shift(&mut self, a: Var, c: T) -> Result<Var> {
        self.check_open()?;
        if !c.is_finite() {
            return Err(Error::InvalidArgument("shift: non-finite offset".into()));
        }
        let va = &self.nodes[a.0].value;
        let data = va.data().iter().map(|&x| x + c).collect();
        let shape = va.shape().to_vec();
        let needs = self.needs(&[a]);
        self.push("shift", shape, data, Op::Shift(a), needs)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.check_open()?;
        let va = &self.nodes[a.0].value;
        let data = va
            .data()
            .iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect();
        let shape = va.shape().to_vec();
        let needs = self.needs(&[a]);
        self.push("relu", shape, data, Op::Relu(a), needs)
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        self.check_open()?;
        let va = &self.nodes[a.0].value;
        let data = va.data().iter().map(|&x| x * sigmoid(x)).collect();
        let shape = va.shape().to_vec();
        let needs = self.needs(&[a]);
        self.push("silu", shape, data, Op::Silu(a), needs)
    }

    // ---- linear algebra ---------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_open()?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut data = vec![T::zero(); m * n];
        matmul_nn(va.data(), vb.data(), &mut data, m, k, n);
        let needs = self.needs(&[a, b]);
        self.push("matmul", vec![m, n], data, Op::MatMul(a, b), needs)
    }

    /// 2-D convolution over NCHW input with zero padding.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        self.check_open()?;
        let (vx, vw) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
        let (sx, sw) = (vx.shape(), vw.shape());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(Error::shape("conv2d", format!("x {sx:?}, w {sw:?}")));
        }
        let shape = ConvShape::new(sx[1], sx[2], sx[3], sw[0], sw[2], sw[3], stride, pad)
            .ok_or_else(|| Error::shape("conv2d", format!("x {sx:?}, w {sw:?}, stride {stride}, pad {pad}")))?;
        if let Some(b) = bias {
            let sb = self.nodes[b.0].value.shape();
            if sb != [shape.c_out] {
                return Err(Error::shape("conv2d", format!("bias {sb:?}, c_out {}", shape.c_out)));
            }
        }
        let batch = sx[0];
        let (rows, cols) = (shape.col_rows(), shape.col_cols());
        let mut colt = vec![T::zero(); rows * cols];
        let mut data = vec![T::zero(); batch * shape.c_out * cols];
        let bias_data = bias.map(|b| self.nodes[b.0].value.data().to_vec());
        let xs = vx.data();
        let ws = vw.data();
        let sample_in = shape.c_in * shape.h * shape.w;
        let sample_out = shape.c_out * cols;
        for n in 0..batch {
            im2col_t(&xs[n * sample_in..(n + 1) * sample_in], &mut colt, &shape);
            conv_forward_sample(
                ws,
                &colt,
                bias_data.as_deref(),
                &mut data[n * sample_out..(n + 1) * sample_out],
                &shape,
            );
        }
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        let needs = self.needs(&inputs);
        self.push(
            "conv2d",
            vec![batch, shape.c_out, shape.h_out, shape.w_out],
            data,
            Op::Conv2d { x, w, bias, shape },
            needs,
        )
    }

    /// Nearest-neighbor 2x upsampling of NCHW input.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        self.check_open()?;
        let vx = &self.nodes[x.0].value;
        let s = vx.shape();
        if s.len() != 4 {
            return Err(Error::shape("upsample2x", format!("{s:?}")));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let mut data = vec![T::zero(); n * c * 4 * h * w];
        let src = vx.data();
        let (oh, ow) = (2 * h, 2 * w);
        for p in 0..n * c {
            let sp = &src[p * h * w..(p + 1) * h * w];
            let dp = &mut data[p * oh * ow..(p + 1) * oh * ow];
            for i in 0..oh {
                let si = i / 2;
                for j in 0..ow {
                    dp[i * ow + j] = sp[si * w + j / 2];
                }
            }
        }
        let needs = self.needs(&[x]);
        self.push("upsample2x", vec![n, c, oh, ow], data, Op::Upsample2x(x), needs)
    }

    /// Per-channel batch normalization over NCHW input.
    ///
    /// `Train` normalizes with batch statistics (biased variance) and, when
    /// `running` is provided, updates the running buffers in place with the
    /// given momentum. `Eval` normalizes with the running buffers.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode,
        bn_eps: T,
        running: BnRunning<'_, T>,
    ) -> Result<Var> {
        self.check_open()?;
        let vx = &self.nodes[x.0].value;
        let s = vx.shape().to_vec();
        if s.len() != 4 {
            return Err(Error::shape("batch_norm", format!("{s:?}")));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        if self.nodes[gamma.0].value.shape() != [c] || self.nodes[beta.0].value.shape() != [c] {
            return Err(Error::shape("batch_norm", "gamma/beta must be [C]".to_string()));
        }
        let reduce = (n * h * w).max(1);
        let xs = vx.data();
        let plane = h * w;

        let (mean, var): (Vec<T>, Vec<T>) = match mode {
            BnMode::Train => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ci in 0..c {
                    let mut acc = T::zero();
                    for ni in 0..n {
                        let at = (ni * c + ci) * plane;
                        for &v in &xs[at..at + plane] {
                            acc += v;
                        }
                    }
                    let m = acc / T::from_usize(reduce);
                    let mut vacc = T::zero();
                    for ni in 0..n {
                        let at = (ni * c + ci) * plane;
                        for &v in &xs[at..at + plane] {
                            let d = v - m;
                            vacc += d * d;
                        }
                    }
                    mean[ci] = m;
                    var[ci] = vacc / T::from_usize(reduce);
                }
                (mean, var)
            }
            BnMode::Eval => match &running {
                BnRunning::Frozen { mean, var } => (mean.data().to_vec(), var.data().to_vec()),
                BnRunning::Update { .. } | BnRunning::None => {
                    return Err(Error::InvalidArgument(
                        "batch_norm eval mode needs frozen running stats".into(),
                    ))
                }
            },
        };

        if let (BnMode::Train, BnRunning::Update { mean: rm, var: rv, momentum }) = (mode, running)
        {
            if rm.shape() != [c] || rv.shape() != [c] {
                return Err(Error::shape("batch_norm", "running stats must be [C]".to_string()));
            }
            let one = T::one();
            for (dst, &src) in rm.data_mut().iter_mut().zip(mean.iter()) {
                *dst = (one - momentum) * *dst + momentum * src;
            }
            for (dst, &src) in rv.data_mut().iter_mut().zip(var.iter()) {
                *dst = (one - momentum) * *dst + momentum * src;
            }
        }

        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + bn_eps).sqrt()).collect();
        let gs = self.nodes[gamma.0].value.data().to_vec();
        let bs = self.nodes[beta.0].value.data().to_vec();
        let mut data = vec![T::zero(); xs.len()];
        for ni in 0..n {
            for ci in 0..c {
                let at = (ni * c + ci) * plane;
                let (m, is, g, b) = (mean[ci], inv_std[ci], gs[ci], bs[ci]);
                for (dst, &src) in data[at..at + plane].iter_mut().zip(&xs[at..at + plane]) {
                    *dst = (src - m) * is * g + b;
                }
            }
        }
        let needs = self.needs(&[x, gamma, beta]);
        self.push(
            "batch_norm",
            s,
            data,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mode,
                mean,
                inv_std,
            },
            needs,
        )
    }

    /// Row lookup: `table` is [K, D], output is [indices.len(), D].
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        self.check_open()?;
        let vt = &self.nodes[table.0].value;
        let s = vt.shape();
        if s.len() != 2 {
            return Err(Error::shape("embedding", format!("table {s:?}")));
        }
        let (k, d) = (s[0], s[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= k) {
            return Err(Error::InvalidArgument(format!(
                "embedding: index {bad} out of range for table with {k} rows"
            )));
        }
        let ts = vt.data();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&ts[i * d..(i + 1) * d]);
        }
        let needs = self.needs(&[table]);
        self.push(
            "embedding",
            vec![indices.len(), d],
            data,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
            needs,
        )
    }

    /// Concatenate two NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_open()?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.len() != 4
            || sb.len() != 4
            || sa[0] != sb[0]
            || sa[2] != sb[2]
            || sa[3] != sb[3]
        {
            return Err(Error::shape("concat_channels", format!("{sa:?} vs {sb:?}")));
        }
        let (n, c1, c2, plane) = (sa[0], sa[1], sb[1], sa[2] * sa[3]);
        let mut data = Vec::with_capacity((c1 + c2) * n * plane);
        let (da, db) = (va.data(), vb.data());
        for ni in 0..n {
            data.extend_from_slice(&da[ni * c1 * plane..(ni + 1) * c1 * plane]);
            data.extend_from_slice(&db[ni * c2 * plane..(ni + 1) * c2 * plane]);
        }
        let needs = self.needs(&[a, b]);
        self.push(
            "concat_channels",
            vec![n, c1 + c2, sa[2], sa[3]],
            data,
            Op::ConcatChannels(a, b),
            needs,
        )
    }

    // ---- reductions --------------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check_open()?;
        let s: T = self.nodes[a.0].value.data().iter().copied().sum();
        let needs = self.needs(&[a]);
        self.push("sum", Vec::new(), vec![s], Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.check_open()?;
        let va = &self.nodes[a.0].value;
        if va.is_empty() {
            return Err(Error::shape("mean", "empty tensor".to_string()));
        }
        let m = va.data().iter().copied().sum::<T>() / T::from_usize(va.len());
        let needs = self.needs(&[a]);
        self.push("mean", Vec::new(), vec![m], Op::Mean(a), needs)
    }

    /// Reduce every axis except the first: [N, ...] -> [N].
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        self.check_open()?;
        let va = &self.nodes[a.0].value;
        let s = va.shape();
        if s.is_empty() {
            return Err(Error::shape("sum_rows", "rank-0 input".to_string()));
        }
        let n = s[0];
        let inner = va.len() / n.max(1);
        let src = va.data();
        let data = (0..n)
            .map(|i| src[i * inner..(i + 1) * inner].iter().copied().sum())
            .collect();
        let needs = self.needs(&[a]);
        self.push("sum_rows", vec![n], data, Op::SumRows(a), needs)
    }

    /// Scalar squared-difference reduction: sum((a - b)^2).
    pub fn sq_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_open()?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() {
            return Err(Error::shape(
                "sq_diff",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let mut s = T::zero();
        for (&x, &y) in va.data().iter().zip(vb.data().iter()) {
            let d = x - y;
            s += d * d;
        }
        let needs = self.needs(&[a, b]);
        self.push("sq_diff", Vec::new(), vec![s], Op::SqDiff(a, b), needs)
    }

    /// Row-wise log-sum-exp: [N, K] -> [N]; rank-1 input -> scalar.
    pub fn log_sum_exp(&mut self, a: Var) -> Result<Var> {
        self.check_open()?;
        let va = &self.nodes[a.0].value;
        let (rows, cols, scalar_out) = match va.shape() {
            [k] => (1usize, *k, true),
            [n, k] => (*n, *k, false),
            s => return Err(Error::shape("log_sum_exp", format!("{s:?}"))),
        };
        if cols == 0 {
            return Err(Error::shape("log_sum_exp", "empty rows".to_string()));
        }
        let src = va.data();
        let mut data = Vec::with_capacity(rows);
        for r in 0..rows {
            data.push(lse_row(&src[r * cols..(r + 1) * cols]));
        }
        let shape = if scalar_out { Vec::new() } else { vec![rows] };
        let needs = self.needs(&[a]);
        self.push("log_sum_exp", shape, data, Op::LogSumExp(a), needs)
    }

    /// One element per row: out[n] = x[n, indices[n]].
    pub fn pick(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        self.check_open()?;
        let vx = &self.nodes[x.0].value;
        let s = vx.shape();
        if s.len() != 2 || s[0] != indices.len() {
            return Err(Error::shape(
                "pick",
                format!("x {s:?} with {} indices", indices.len()),
            ));
        }
        let k = s[1];
        if let Some(&bad) = indices.iter().find(|&&i| i >= k) {
            return Err(Error::InvalidArgument(format!(
                "pick: index {bad} out of range for {k} columns"
            )));
        }
        let src = vx.data();
        let data = indices
            .iter()
            .enumerate()
            .map(|(n, &i)| src[n * k + i])
            .collect();
        let needs = self.needs(&[x]);
        self.push(
            "pick",
            vec![indices.len()],
            data,
            Op::Pick {
                x,
                indices: indices.to_vec(),
            },
            needs,
        )
    }

    /// Row-wise z-score normalization with population standard deviation and
    /// an additive [`ZSCORE_GUARD`] on the denominator. Rank-1 input is one row.
    pub fn zscore(&mut self, x: Var) -> Result<Var> {
        self.check_open()?;
        let vx = &self.nodes[x.0].value;
        let (rows, cols) = match vx.shape() {
            [k] => (1usize, *k),
            [n, k] => (*n, *k),
            s => return Err(Error::shape("zscore", format!("{s:?}"))),
        };
        if cols < 2 {
            return Err(Error::InvalidArgument(
                "zscore needs at least 2 entries per row".into(),
            ));
        }
        let guard = T::from_f64(ZSCORE_GUARD);
        let src = vx.data();
        let mut data = vec![T::zero(); src.len()];
        let mut sigmas = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let (mu, sigma) = row_mean_std(row);
            sigmas.push(sigma);
            let denom = sigma + guard;
            for (dst, &v) in data[r * cols..(r + 1) * cols].iter_mut().zip(row.iter()) {
                *dst = (v - mu) / denom;
            }
        }
        let shape = vx.shape().to_vec();
        let needs = self.needs(&[x]);
        self.push("zscore", shape, data, Op::Zscore { x, sigma: sigmas }, needs)
    }

    // ---- shape plumbing ------------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        self.check_open()?;
        let va = &self.nodes[a.0].value;
        let n: usize = shape.iter().product();
        if n != va.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?}", va.shape(), shape),
            ));
        }
        let data = va.data().to_vec();
        let needs = self.needs(&[a]);
        self.push("reshape", shape, data, Op::Reshape(a), needs)
    }

    /// Repeat each row of the first axis `copies` times (interleaved):
    /// [N, ...] -> [N*copies, ...].
    pub fn repeat_rows(&mut self, a: Var, copies: usize) -> Result<Var> {
        self.check_open()?;
        if copies == 0 {
            return Err(Error::InvalidArgument("repeat_rows: zero copies".into()));
        }
        let va = &self.nodes[a.0].value;
        let s = va.shape();
        if s.is_empty() {
            return Err(Error::shape("repeat_rows", "rank-0 input".to_string()));
        }
        let n = s[0];
        let inner = va.len() / n.max(1);
        let src = va.data();
        let mut data = Vec::with_capacity(va.len() * copies);
        for i in 0..n {
            for _ in 0..copies {
                data.extend_from_slice(&src[i * inner..(i + 1) * inner]);
            }
        }
        let mut shape = s.to_vec();
        shape[0] = n * copies;
        let needs = self.needs(&[a]);
        self.push("repeat_rows", shape, data, Op::RepeatRows { x: a, copies }, needs)
    }

    /// Add a per-sample per-channel bias: x [N,C,H,W] + b [N,C].
    pub fn add_chan_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        self.check_open()?;
        let (vx, vb) = (&self.nodes[x.0].value, &self.nodes[b.0].value);
        let (sx, sb) = (vx.shape(), vb.shape());
        if sx.len() != 4 || sb.len() != 2 || sb[0] != sx[0] || sb[1] != sx[1] {
            return Err(Error::shape("add_chan_bias", format!("x {sx:?}, b {sb:?}")));
        }
        let plane = sx[2] * sx[3];
        let xs = vx.data();
        let bs = vb.data();
        let mut data = xs.to_vec();
        for (p, &bv) in bs.iter().enumerate() {
            for v in &mut data[p * plane..(p + 1) * plane] {
                *v += bv;
            }
        }
        let shape = sx.to_vec();
        let needs = self.needs(&[x, b]);
        self.push("add_chan_bias", shape, data, Op::AddChanBias { x, b }, needs)
    }

    /// Add a shared bias row: x [N,D] + b [D].
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        self.check_open()?;
        let (vx, vb) = (&self.nodes[x.0].value, &self.nodes[b.0].value);
        let (sx, sb) = (vx.shape(), vb.shape());
        if sx.len() != 2 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(Error::shape("add_bias", format!("x {sx:?}, b {sb:?}")));
        }
        let d = sx[1];
        let xs = vx.data();
        let bs = vb.data();
        let mut data = xs.to_vec();
        for row in data.chunks_mut(d) {
            for (v, &bv) in row.iter_mut().zip(bs.iter()) {
                *v += bv;
            }
        }
        let shape = sx.to_vec();
        let needs = self.needs(&[x, b]);
        self.push("add_bias", shape, data, Op::AddBias { x, b }, needs)
    }

    /// Stack single-element tensors into a rank-1 vector.
    pub fn stack_scalars(&mut self, parts: &[Var]) -> Result<Var> {
        self.check_open()?;
        if parts.is_empty() {
            return Err(Error::InvalidArgument("stack_scalars: empty input".into()));
        }
        let mut data = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = &self.nodes[p.0].value;
            if v.len() != 1 {
                return Err(Error::shape(
                    "stack_scalars",
                    format!("part has {} elems", v.len()),
                ));
            }
            data.push(v.data()[0]);
        }
        let needs = self.needs(parts);
        self.push(
            "stack_scalars",
            vec![parts.len()],
            data,
            Op::StackScalars(parts.to_vec()),
            needs,
        )
    }

    /// Mean of `-log softmax(z)[label]` over rows. `z` is [N,K] (or [K] for a
    /// single row) and `labels` has one entry per row.
    pub fn cross_entropy_mean(&mut self, z: Var, labels: &[usize]) -> Result<Var> {
        let v = self.value(z);
        let z2 = match v.shape() {
            [k] => {
                let k = *k;
                if labels.len() != 1 {
                    return Err(Error::shape(
                        "cross_entropy_mean",
                        format!("{} labels for a single row", labels.len()),
                    ));
                }
                self.reshape(z, vec![1, k])?
            }
            [_, _] => z,
            s => return Err(Error::shape("cross_entropy_mean", format!("{s:?}"))),
        };
        let lse = self.log_sum_exp(z2)?;
        let picked = self.pick(z2, labels)?;
        let per_row = self.sub(lse, picked)?;
        self.mean(per_row)
    }

    // ---- backward ------------------------------------------------------------

    /// Reverse sweep from a scalar loss. Gradients land on `requires_grad`
    /// leaves (see [`Graph::grad`]); the graph is consumed afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check_open()?;
        let lid = loss.0;
        if self.nodes[lid].value.len() != 1 {
            return Err(Error::NonScalarLoss(self.nodes[lid].value.len()));
        }
        self.consumed = true;
        if !self.nodes[lid].needs_grad {
            return Ok(());
        }
        let timing = std::env::var_os("NDGRAD_BACKWARD_TIMING").is_some();
        let mut per_op: std::collections::HashMap<&'static str, f64> = Default::default();
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[lid] = Some(vec![T::one()]);
        for id in (0..=lid).rev() {
            let Some(g) = grads[id].take() else { continue };
            let is_tracked_leaf = {
                let node = &self.nodes[id];
                match node.op {
                    Op::Leaf { requires_grad } => requires_grad,
                    _ => {
                        if timing {
                            let t0 = std::time::Instant::now();
                            self.propagate(id, &g, &mut grads);
                            *per_op.entry(self.op_name(id)).or_default() +=
                                t0.elapsed().as_secs_f64();
                        } else {
                            self.propagate(id, &g, &mut grads);
                        }
                        false
                    }
                }
            };
            if is_tracked_leaf {
                let shape = self.nodes[id].value.shape().to_vec();
                self.nodes[id].grad = Some(Tensor::from_raw(shape, g));
            }
        }
        if timing {
            let mut rows: Vec<_> = per_op.into_iter().collect();
            rows.sort_by(|a, b| b.1.total_cmp(&a.1));
            for (name, secs) in rows {
                eprintln!("[backward] {name}: {:.3} ms", secs * 1000.0);
            }
        }
        Ok(())
    }

    fn op_name(&self, id: usize) -> &'static str {
        match &self.nodes[id].op {
            Op::Leaf { .. } => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Shift(..) => "shift",
            Op::MatMul(..) => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::Upsample2x(..) => "upsample2x",
            Op::Relu(..) => "relu",
            Op::Silu(..) => "silu",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Embedding { .. } => "embedding",
            Op::ConcatChannels(..) => "concat_channels",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumRows(..) => "sum_rows",
            Op::SqDiff(..) => "sq_diff",
            Op::LogSumExp(..) => "log_sum_exp",
            Op::Pick { .. } => "pick",
            Op::Zscore { .. } => "zscore",
            Op::Reshape(..) => "reshape",
            Op::RepeatRows { .. } => "repeat_rows",
            Op::AddChanBias { .. } => "add_chan_bias",
            Op::AddBias { .. } => "add_bias",
            Op::StackScalars(..) => "stack_scalars",
        }
    }

    fn propagate(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        let two = T::one() + T::one();
        match &self.nodes[id].op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, val(*a).len(), |buf| {
                        for (d, &gv) in buf.iter_mut().zip(g) {
                            *d += gv;
                        }
                    });
                }
                if needs(*b) {
                    accumulate(grads, *b, val(*b).len(), |buf| {
                        for (d, &gv) in buf.iter_mut().zip(g) {
                            *d += gv;
                        }
                    });
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, val(*a).len(), |buf| {
                        for (d, &gv) in buf.iter_mut().zip(g) {
                            *d += gv;
                        }
                    });
                }
                if needs(*b) {
                    accumulate(grads, *b, val(*b).len(), |buf| {
                        for (d, &gv) in buf.iter_mut().zip(g) {
                            *d -= gv;
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let vb = val(*b);
                    accumulate(grads, *a, val(*a).len(), |buf| {
                        for ((d, &gv), &bv) in buf.iter_mut().zip(g).zip(vb) {
                            *d += gv * bv;
                        }
                    });
                }
                if needs(*b) {
                    let va = val(*a);
                    accumulate(grads, *b, val(*b).len(), |buf| {
                        for ((d, &gv), &av) in buf.iter_mut().zip(g).zip(va) {
                            *d += gv * av;
                        }
                    });
                }
            }
            Op::Scale(a, c) => {
                if needs(*a) {
                    let c = *c;
                    accumulate(grads, *a, val(*a).len(), |buf| {
                        for (d, &gv) in buf.iter_mut().zip(g) {
                            *d += gv * c;
                        }
                    });
                }
            }
            Op::Shift(a) => {
                if needs(*a) {
                    accumulate(grads, *a, val(*a).len(), |buf| {
                        for (d, &gv) in buf.iter_mut().zip(g) {
                            *d += gv;
                        }
                    });
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (
                    self.nodes[a.0].value.shape(),
                    self.nodes[b.0].value.shape(),
                );
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if needs(*a) {
                    let vb = val(*b);
                    accumulate(grads, *a, m * k, |buf| {
                        // dA = g * B^T
                        matmul_nt(g, vb, buf, m, n, k);
                    });
                }
                if needs(*b) {
                    let va = val(*a);
                    accumulate(grads, *b, k * n, |buf| {
                        // dB = A^T * g: contraction over m, A stored [m,k], g stored [m,n]
                        matmul_tn(va, g, buf, k, m, n);
                    });
                }
            }
            Op::Conv2d { x, w, bias, shape } => {
                let batch = self.nodes[x.0].value.shape()[0];
                let (rows, cols) = (shape.col_rows(), shape.col_cols());
                let sample_in = shape.c_in * shape.h * shape.w;
                let sample_out = shape.c_out * cols;
                let xs = val(*x);
                let ws = val(*w);
                if needs(*w) {
                    let mut colt = vec![T::zero(); rows * cols];
                    accumulate(grads, *w, ws.len(), |buf| {
                        for nb in 0..batch {
                            im2col_t(&xs[nb * sample_in..(nb + 1) * sample_in], &mut colt, shape);
                            conv_grad_w_sample(
                                &g[nb * sample_out..(nb + 1) * sample_out],
                                &colt,
                                buf,
                                shape,
                            );
                        }
                    });
                }
                if needs(*x) {
                    let mut colg = vec![T::zero(); rows * cols];
                    accumulate(grads, *x, xs.len(), |buf| {
                        for nb in 0..batch {
                            conv_grad_cols_sample(
                                &g[nb * sample_out..(nb + 1) * sample_out],
                                ws,
                                &mut colg,
                                shape,
                            );
                            col2im_t_add(
                                &colg,
                                &mut buf[nb * sample_in..(nb + 1) * sample_in],
                                shape,
                            );
                        }
                    });
                }
                if let Some(b) = bias {
                    if needs(*b) {
                        accumulate(grads, *b, shape.c_out, |buf| {
                            for nb in 0..batch {
                                for (c, d) in buf.iter_mut().enumerate() {
                                    let at = nb * sample_out + c * cols;
                                    for &gv in &g[at..at + cols] {
                                        *d += gv;
                                    }
                                }
                            }
                        });
                    }
                }
            }
            Op::Upsample2x(a) => {
                if needs(*a) {
                    let s = self.nodes[a.0].value.shape();
                    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
                    let (oh, ow) = (2 * h, 2 * w);
                    accumulate(grads, *a, n * c * h * w, |buf| {
                        for p in 0..n * c {
                            let gp = &g[p * oh * ow..(p + 1) * oh * ow];
                            let bp = &mut buf[p * h * w..(p + 1) * h * w];
                            for i in 0..oh {
                                for j in 0..ow {
                                    bp[(i / 2) * w + j / 2] += gp[i * ow + j];
                                }
                            }
                        }
                    });
                }
            }
            Op::Relu(a) => {
                if needs(*a) {
                    let va = val(*a);
                    accumulate(grads, *a, va.len(), |buf| {
                        for ((d, &gv), &xv) in buf.iter_mut().zip(g).zip(va) {
                            if xv > T::zero() {
                                *d += gv;
                            }
                        }
                    });
                }
            }
            Op::Silu(a) => {
                if needs(*a) {
                    let va = val(*a);
                    accumulate(grads, *a, va.len(), |buf| {
                        for ((d, &gv), &xv) in buf.iter_mut().zip(g).zip(va) {
                            let s = sigmoid(xv);
                            *d += gv * s * (T::one() + xv * (T::one() - s));
                        }
                    });
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mode,
                mean,
                inv_std,
            } => {
                let s = self.nodes[x.0].value.shape();
                let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
                let plane = h * w;
                let reduce = T::from_usize((n * plane).max(1));
                let xs = val(*x);
                let gs = val(*gamma);
                // per-channel sums of g and g*xhat, shared by all three grads
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for ni in 0..n {
                    for ci in 0..c {
                        let at = (ni * c + ci) * plane;
                        let (m, is) = (mean[ci], inv_std[ci]);
                        let mut sg = T::zero();
                        let mut sgx = T::zero();
                        for (&gv, &xv) in g[at..at + plane].iter().zip(&xs[at..at + plane]) {
                            sg += gv;
                            sgx += gv * (xv - m) * is;
                        }
                        sum_g[ci] += sg;
                        sum_gx[ci] += sgx;
                    }
                }
                if needs(*x) {
                    accumulate(grads, *x, xs.len(), |buf| {
                        for ni in 0..n {
                            for ci in 0..c {
                                let at = (ni * c + ci) * plane;
                                let (m, is, ga) = (mean[ci], inv_std[ci], gs[ci]);
                                match mode {
                                    BnMode::Train => {
                                        let mg = sum_g[ci] / reduce;
                                        let mgx = sum_gx[ci] / reduce;
                                        for ((d, &gv), &xv) in buf[at..at + plane]
                                            .iter_mut()
                                            .zip(&g[at..at + plane])
                                            .zip(&xs[at..at + plane])
                                        {
                                            let xhat = (xv - m) * is;
                                            *d += ga * is * (gv - mg - xhat * mgx);
                                        }
                                    }
                                    BnMode::Eval => {
                                        for (d, &gv) in
                                            buf[at..at + plane].iter_mut().zip(&g[at..at + plane])
                                        {
                                            *d += ga * is * gv;
                                        }
                                    }
                                }
                            }
                        }
                    });
                }
                if needs(*gamma) {
                    accumulate(grads, *gamma, c, |buf| {
                        for (d, &v) in buf.iter_mut().zip(sum_gx.iter()) {
                            *d += v;
                        }
                    });
                }
                if needs(*beta) {
                    accumulate(grads, *beta, c, |buf| {
                        for (d, &v) in buf.iter_mut().zip(sum_g.iter()) {
                            *d += v;
                        }
                    });
                }
            }
            Op::Embedding { table, indices } => {
                if needs(*table) {
                    let d = self.nodes[table.0].value.shape()[1];
                    let len = self.nodes[table.0].value.len();
                    accumulate(grads, *table, len, |buf| {
                        for (n, &i) in indices.iter().enumerate() {
                            for (dst, &gv) in
                                buf[i * d..(i + 1) * d].iter_mut().zip(&g[n * d..(n + 1) * d])
                            {
                                *dst += gv;
                            }
                        }
                    });
                }
            }
            Op::ConcatChannels(a, b) => {
                let sa = self.nodes[a.0].value.shape();
                let sb = self.nodes[b.0].value.shape();
                let (n, c1, c2, plane) = (sa[0], sa[1], sb[1], sa[2] * sa[3]);
                let row = (c1 + c2) * plane;
                if needs(*a) {
                    accumulate(grads, *a, n * c1 * plane, |buf| {
                        for ni in 0..n {
                            let src = &g[ni * row..ni * row + c1 * plane];
                            for (d, &gv) in
                                buf[ni * c1 * plane..(ni + 1) * c1 * plane].iter_mut().zip(src)
                            {
                                *d += gv;
                            }
                        }
                    });
                }
                if needs(*b) {
                    accumulate(grads, *b, n * c2 * plane, |buf| {
                        for ni in 0..n {
                            let src = &g[ni * row + c1 * plane..(ni + 1) * row];
                            for (d, &gv) in
                                buf[ni * c2 * plane..(ni + 1) * c2 * plane].iter_mut().zip(src)
                            {
                                *d += gv;
                            }
                        }
                    });
                }
            }
            Op::Sum(a) => {
                if needs(*a) {
                    let gv = g[0];
                    accumulate(grads, *a, val(*a).len(), |buf| {
                        for d in buf.iter_mut() {
                            *d += gv;
                        }
                    });
                }
            }
            Op::Mean(a) => {
                if needs(*a) {
                    let len = val(*a).len();
                    let gv = g[0] / T::from_usize(len);
                    accumulate(grads, *a, len, |buf| {
                        for d in buf.iter_mut() {
                            *d += gv;
                        }
                    });
                }
            }
            Op::SumRows(a) => {
                if needs(*a) {
                    let len = val(*a).len();
                    let n = self.nodes[a.0].value.shape()[0];
                    let inner = len / n.max(1);
                    accumulate(grads, *a, len, |buf| {
                        for (i, &gv) in g.iter().enumerate() {
                            for d in &mut buf[i * inner..(i + 1) * inner] {
                                *d += gv;
                            }
                        }
                    });
                }
            }
            Op::SqDiff(a, b) => {
                let gv = g[0];
                let (va, vb) = (val(*a), val(*b));
                if needs(*a) {
                    accumulate(grads, *a, va.len(), |buf| {
                        for ((d, &x), &y) in buf.iter_mut().zip(va).zip(vb) {
                            *d += two * gv * (x - y);
                        }
                    });
                }
                if needs(*b) {
                    accumulate(grads, *b, vb.len(), |buf| {
                        for ((d, &x), &y) in buf.iter_mut().zip(va).zip(vb) {
                            *d -= two * gv * (x - y);
                        }
                    });
                }
            }
            Op::LogSumExp(a) => {
                if needs(*a) {
                    let va = val(*a);
                    let cols = *self.nodes[a.0].value.shape().last().unwrap();
                    let rows = va.len() / cols;
                    accumulate(grads, *a, va.len(), |buf| {
                        for r in 0..rows {
                            let row = &va[r * cols..(r + 1) * cols];
                            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
                            let denom: T = row.iter().map(|&v| (v - m).exp()).sum();
                            let gv = g[r];
                            for (d, &v) in buf[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                                *d += gv * (v - m).exp() / denom;
                            }
                        }
                    });
                }
            }
            Op::Pick { x, indices } => {
                if needs(*x) {
                    let k = self.nodes[x.0].value.shape()[1];
                    accumulate(grads, *x, val(*x).len(), |buf| {
                        for (n, &i) in indices.iter().enumerate() {
                            buf[n * k + i] += g[n];
                        }
                    });
                }
            }
            Op::Zscore { x, sigma } => {
                if needs(*x) {
                    let va = val(*x);
                    let cols = *self.nodes[x.0].value.shape().last().unwrap();
                    let rows = va.len() / cols;
                    let guard = T::from_f64(ZSCORE_GUARD);
                    let kk = T::from_usize(cols);
                    accumulate(grads, *x, va.len(), |buf| {
                        for r in 0..rows {
                            let sg = sigma[r];
                            if sg <= T::zero() {
                                // degenerate row: defined to contribute no gradient
                                continue;
                            }
                            let row = &va[r * cols..(r + 1) * cols];
                            let grow = &g[r * cols..(r + 1) * cols];
                            let denom = sg + guard;
                            let mu = row.iter().copied().sum::<T>() / kk;
                            let gmean = grow.iter().copied().sum::<T>() / kk;
                            let gdot: T = grow
                                .iter()
                                .zip(row.iter())
                                .map(|(&gv, &v)| gv * (v - mu))
                                .sum();
                            let coef = gdot / (kk * sg * denom * denom);
                            for ((d, &gv), &v) in
                                buf[r * cols..(r + 1) * cols].iter_mut().zip(grow).zip(row)
                            {
                                *d += (gv - gmean) / denom - (v - mu) * coef;
                            }
                        }
                    });
                }
            }
            Op::Reshape(a) => {
                if needs(*a) {
                    accumulate(grads, *a, val(*a).len(), |buf| {
                        for (d, &gv) in buf.iter_mut().zip(g) {
                            *d += gv;
                        }
                    });
                }
            }
            Op::RepeatRows { x, copies } => {
                if needs(*x) {
                    let len = val(*x).len();
                    let n = self.nodes[x.0].value.shape()[0];
                    let inner = len / n.max(1);
                    accumulate(grads, *x, len, |buf| {
                        for i in 0..n {
                            for c in 0..*copies {
                                let src = &g[(i * copies + c) * inner..(i * copies + c + 1) * inner];
                                for (d, &gv) in buf[i * inner..(i + 1) * inner].iter_mut().zip(src)
                                {
                                    *d += gv;
                                }
                            }
                        }
                    });
                }
            }
            Op::AddChanBias { x, b } => {
                if needs(*x) {
                    accumulate(grads, *x, val(*x).len(), |buf| {
                        for (d, &gv) in buf.iter_mut().zip(g) {
                            *d += gv;
                        }
                    });
                }
                if needs(*b) {
                    let s = self.nodes[x.0].value.shape();
                    let plane = s[2] * s[3];
                    accumulate(grads, *b, val(*b).len(), |buf| {
                        for (p, d) in buf.iter_mut().enumerate() {
                            for &gv in &g[p * plane..(p + 1) * plane] {
                                *d += gv;
                            }
                        }
                    });
                }
            }
            Op::AddBias { x, b } => {
                if needs(*x) {
                    accumulate(grads, *x, val(*x).len(), |buf| {
                        for (d, &gv) in buf.iter_mut().zip(g) {
                            *d += gv;
                        }
                    });
                }
                if needs(*b) {
                    let d_len = self.nodes[b.0].value.len();
                    accumulate(grads, *b, d_len, |buf| {
                        for row in g.chunks(d_len) {
                            for (d, &gv) in buf.iter_mut().zip(row) {
                                *d += gv;
                            }
                        }
                    });
                }
            }
            Op::StackScalars(parts) => {
                for (i, &p) in parts.iter().enumerate() {
                    if needs(p) {
                        accumulate(grads, p, 1, |buf| {
                            buf[0] += g[i];
                        });
                    }
                }
            }
        }
    }
}

fn accumulate<T: Scalar>(
    grads: &mut [Option<Vec<T>>],
    v: Var,
    len: usize,
    f: impl FnOnce(&mut [T]),
) {
    let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
    f(buf);
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn lse_row<T: Scalar>(row: &[T]) -> T {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = row.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}

fn row_mean_std<T: Scalar>(row: &[T]) -> (T, T) {
    let k = T::from_usize(row.len());
    let mu = row.iter().copied().sum::<T>() / k;
    let var = row
        .iter()
        .map(|&v| {
            let d = v - mu;
            d * d
        })
        .sum::<T>()
        / k;
    (mu, var.sqrt())
}

/// Running-statistics argument for [`Graph::batch_norm`].
pub enum BnRunning<'a, T: Scalar> {
    /// No running buffers (train mode without tracking).
    None,
    /// Train mode: update these buffers in place with the given momentum.
    Update {
        mean: &'a mut Tensor<T>,
        var: &'a mut Tensor<T>,
        momentum: T,
    },
    /// Eval mode: normalize with these frozen buffers.
    Frozen {
        mean: &'a Tensor<T>,
        var: &'a Tensor<T>,
    },
}
