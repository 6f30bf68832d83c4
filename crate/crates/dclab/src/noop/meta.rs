use ndgrad::{Graph, Scalar, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d};

/// Light convolutional encoder-decoder mapping an image to its noise offset.
///
/// Three stride-2 downsampling stages and three upsampling stages, each
/// conv + batch-norm + ReLU, with a zero-initialized 1x1 output head so a
/// fresh network is exactly the zero map for every input.
#[derive(Debug, Clone)]
pub struct MetaNetwork<T: Scalar> {
    pub in_channels: usize,
    pub base_channels: usize,
    down: Vec<Conv2d<T>>,
    up: Vec<Conv2d<T>>,
    bn_down: Vec<BatchNorm2d<T>>,
    bn_up: Vec<BatchNorm2d<T>>,
    head: Conv2d<T>,
}

/// Trainable-leaf handles from one [`MetaNetwork::forward_train`] upload,
/// ordered like [`MetaNetwork::trainable_params_mut`].
pub struct MetaRefs {
    vars: Vec<Var>,
}

impl<T: Scalar> MetaNetwork<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, in_channels: usize, base_channels: usize) -> Self {
        let b = base_channels;
        let down_ch = [(in_channels, b), (b, 2 * b), (2 * b, 4 * b)];
        let up_ch = [(4 * b, 2 * b), (2 * b, b), (b, b)];
        Self {
            in_channels,
            base_channels,
            down: down_ch
                .iter()
                .map(|&(ci, co)| Conv2d::new(rng, ci, co, 3, 2, 1))
                .collect(),
            up: up_ch
                .iter()
                .map(|&(ci, co)| Conv2d::new(rng, ci, co, 3, 1, 1))
                .collect(),
            bn_down: down_ch.iter().map(|&(_, co)| BatchNorm2d::new(co)).collect(),
            bn_up: up_ch.iter().map(|&(_, co)| BatchNorm2d::new(co)).collect(),
            head: Conv2d::zeroed(b, in_channels, 1, 1, 0),
        }
    }

    /// Input spatial extent must survive three halvings.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        match shape {
            [_, c, h, w] if *c == self.in_channels && h % 8 == 0 && w % 8 == 0 && *h >= 8 => Ok(()),
            s => Err(Error::InvalidArgument(format!(
                "meta network needs [n, {}, 8k, 8k] input, got {s:?}",
                self.in_channels
            ))),
        }
    }

    /// Training-mode forward: batch-norm uses batch statistics and updates
    /// the running buffers; weights are uploaded as trainable leaves whose
    /// handles come back for gradient collection.
    pub fn forward_train(&mut self, g: &mut Graph<T>, x: Var) -> Result<(Var, MetaRefs)> {
        self.check_input(g.value(x).shape())?;
        let mut vars = Vec::with_capacity(26);
        let mut h = x;
        for i in 0..3 {
            let conv = self.down[i].upload(g, true);
            vars.push(conv.w);
            vars.push(conv.b);
            h = conv.apply(g, h)?;
            let gamma = g.leaf(self.bn_down[i].gamma.clone(), true);
            let beta = g.leaf(self.bn_down[i].beta.clone(), true);
            vars.push(gamma);
            vars.push(beta);
            h = apply_bn_train(g, h, gamma, beta, &mut self.bn_down[i])?;
            h = g.relu(h)?;
        }
        for i in 0..3 {
            h = g.upsample2x(h)?;
            let conv = self.up[i].upload(g, true);
            vars.push(conv.w);
            vars.push(conv.b);
            h = conv.apply(g, h)?;
            let gamma = g.leaf(self.bn_up[i].gamma.clone(), true);
            let beta = g.leaf(self.bn_up[i].beta.clone(), true);
            vars.push(gamma);
            vars.push(beta);
            h = apply_bn_train(g, h, gamma, beta, &mut self.bn_up[i])?;
            h = g.relu(h)?;
        }
        let head = self.head.upload(g, true);
        vars.push(head.w);
        vars.push(head.b);
        let out = head.apply(g, h)?;
        Ok((out, MetaRefs { vars }))
    }

    /// Eval-mode forward with frozen running statistics; nothing trainable.
    pub fn forward_eval(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        self.check_input(g.value(x).shape())?;
        let mut h = x;
        for i in 0..3 {
            let conv = self.down[i].upload(g, false);
            h = conv.apply(g, h)?;
            h = self.bn_down[i].apply_eval(g, h)?;
            h = g.relu(h)?;
        }
        for i in 0..3 {
            h = g.upsample2x(h)?;
            let conv = self.up[i].upload(g, false);
            h = conv.apply(g, h)?;
            h = self.bn_up[i].apply_eval(g, h)?;
            h = g.relu(h)?;
        }
        let head = self.head.upload(g, false);
        head.apply(g, h)
    }

    /// Offset values for a batch, eval mode.
    pub fn offsets(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = self.forward_eval(&mut g, xv)?;
        Ok(g.value(out).clone())
    }

    /// Trainable tensors, ordered to match [`MetaRefs`].
    pub fn trainable_params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v: Vec<&mut Tensor<T>> = Vec::with_capacity(26);
        for (conv, bn) in self.down.iter_mut().zip(self.bn_down.iter_mut()) {
            v.push(&mut conv.w);
            v.push(&mut conv.b);
            v.push(&mut bn.gamma);
            v.push(&mut bn.beta);
        }
        for (conv, bn) in self.up.iter_mut().zip(self.bn_up.iter_mut()) {
            v.push(&mut conv.w);
            v.push(&mut conv.b);
            v.push(&mut bn.gamma);
            v.push(&mut bn.beta);
        }
        v.push(&mut self.head.w);
        v.push(&mut self.head.b);
        v
    }

    pub fn collect_grads(&self, g: &Graph<T>, refs: &MetaRefs) -> Result<Vec<Tensor<T>>> {
        refs.vars
            .iter()
            .map(|&v| {
                g.grad(v).cloned().ok_or_else(|| {
                    Error::InvalidArgument("missing meta-network gradient".into())
                })
            })
            .collect()
    }

    /// All tensors (weights plus running statistics) with checkpoint names
    /// under the reserved `meta.` prefix.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = Vec::new();
        for (i, (conv, bn)) in self.down.iter().zip(self.bn_down.iter()).enumerate() {
            out.push((format!("meta.down{i}.w"), &conv.w));
            out.push((format!("meta.down{i}.b"), &conv.b));
            out.push((format!("meta.bn_down{i}.gamma"), &bn.gamma));
            out.push((format!("meta.bn_down{i}.beta"), &bn.beta));
            out.push((format!("meta.bn_down{i}.running_mean"), &bn.running_mean));
            out.push((format!("meta.bn_down{i}.running_var"), &bn.running_var));
        }
        for (i, (conv, bn)) in self.up.iter().zip(self.bn_up.iter()).enumerate() {
            out.push((format!("meta.up{i}.w"), &conv.w));
            out.push((format!("meta.up{i}.b"), &conv.b));
            out.push((format!("meta.bn_up{i}.gamma"), &bn.gamma));
            out.push((format!("meta.bn_up{i}.beta"), &bn.beta));
            out.push((format!("meta.bn_up{i}.running_mean"), &bn.running_mean));
            out.push((format!("meta.bn_up{i}.running_var"), &bn.running_var));
        }
        out.push(("meta.head.w".into(), &self.head.w));
        out.push(("meta.head.b".into(), &self.head.b));
        out
    }

    /// Mutable view of every named tensor, in [`Self::named_tensors`] order.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = Vec::new();
        for (i, (conv, bn)) in self.down.iter_mut().zip(self.bn_down.iter_mut()).enumerate() {
            out.push((format!("meta.down{i}.w"), &mut conv.w));
            out.push((format!("meta.down{i}.b"), &mut conv.b));
            out.push((format!("meta.bn_down{i}.gamma"), &mut bn.gamma));
            out.push((format!("meta.bn_down{i}.beta"), &mut bn.beta));
            out.push((format!("meta.bn_down{i}.running_mean"), &mut bn.running_mean));
            out.push((format!("meta.bn_down{i}.running_var"), &mut bn.running_var));
        }
        for (i, (conv, bn)) in self.up.iter_mut().zip(self.bn_up.iter_mut()).enumerate() {
            out.push((format!("meta.up{i}.w"), &mut conv.w));
            out.push((format!("meta.up{i}.b"), &mut conv.b));
            out.push((format!("meta.bn_up{i}.gamma"), &mut bn.gamma));
            out.push((format!("meta.bn_up{i}.beta"), &mut bn.beta));
            out.push((format!("meta.bn_up{i}.running_mean"), &mut bn.running_mean));
            out.push((format!("meta.bn_up{i}.running_var"), &mut bn.running_var));
        }
        out.push(("meta.head.w".into(), &mut self.head.w));
        out.push(("meta.head.b".into(), &mut self.head.b));
        out
    }
}

fn apply_bn_train<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    bn: &mut BatchNorm2d<T>,
) -> Result<Var> {
    let momentum = T::from_f64(bn.momentum);
    Ok(g.batch_norm(
        x,
        gamma,
        beta,
        ndgrad::BnMode::Train,
        T::from_f64(bn.eps),
        ndgrad::BnRunning::Update {
            mean: &mut bn.running_mean,
            var: &mut bn.running_var,
            momentum,
        },
    )?)
}
