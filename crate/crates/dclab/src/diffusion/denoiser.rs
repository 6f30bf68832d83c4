use std::path::Path;

use ndgrad::{checkpoint, Graph, Scalar, Tensor, Var};
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::nn::{time_embedding_batch, Conv2d, Conv2dRef, Linear, LinearRef};

/// Architecture of the pixel-space conditional denoiser.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenoiserConfig {
    pub num_classes: usize,
    pub in_channels: usize,
    pub image_size: usize,
    pub base_channels: usize,
    pub emb_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            in_channels: 1,
            image_size: 16,
            base_channels: 16,
            emb_dim: 32,
        }
    }
}

impl DenoiserConfig {
    fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::InvalidArgument("denoiser needs >= 1 class".into()));
        }
        if self.image_size % 4 != 0 || self.image_size < 8 {
            return Err(Error::InvalidArgument(
                "image size must be a multiple of 4 and >= 8".into(),
            ));
        }
        if self.emb_dim < 2 || self.emb_dim % 2 != 0 {
            return Err(Error::InvalidArgument("emb dim must be even and >= 2".into()));
        }
        Ok(())
    }
}

/// Small conditional U-Net predicting the injected noise.
///
/// Two stride-2 downsamples, a middle block, two nearest-neighbor upsamples
/// with encoder skips, SiLU activations throughout. Conditioning is a
/// sinusoidal timestep embedding through a 2-layer MLP plus a learned class
/// embedding, projected to a per-channel bias at every resolution. The output
/// head starts zero so an untrained model predicts zero noise.
#[derive(Debug, Clone)]
pub struct Denoiser<T: Scalar> {
    pub cfg: DenoiserConfig,
    conv_in: Conv2d<T>,
    down1: Conv2d<T>,
    down2: Conv2d<T>,
    mid: Conv2d<T>,
    up1: Conv2d<T>,
    up2: Conv2d<T>,
    head: Conv2d<T>,
    proj: Vec<Linear<T>>,
    time_mlp1: Linear<T>,
    time_mlp2: Linear<T>,
    class_emb: Tensor<T>,
    frozen: bool,
}

/// Graph handles for one upload of the denoiser weights.
pub struct DenoiserRefs {
    conv_in: Conv2dRef,
    down1: Conv2dRef,
    down2: Conv2dRef,
    mid: Conv2dRef,
    up1: Conv2dRef,
    up2: Conv2dRef,
    head: Conv2dRef,
    proj: Vec<LinearRef>,
    time_mlp1: LinearRef,
    time_mlp2: LinearRef,
    class_emb: Var,
}

impl<T: Scalar> Denoiser<T> {
    pub fn new<R: Rng + ?Sized>(cfg: DenoiserConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let b = cfg.base_channels;
        let c = cfg.in_channels;
        let e = cfg.emb_dim;
        let stage_channels = [b, 2 * b, 4 * b, 4 * b, 2 * b, b];
        let emb_bound = 1.0 / (e as f64).sqrt();
        let class_emb_data = (0..cfg.num_classes * e)
            .map(|_| T::from_f64(rng.random_range(-emb_bound..emb_bound)))
            .collect();
        Ok(Self {
            conv_in: Conv2d::new(rng, c, b, 3, 1, 1),
            down1: Conv2d::new(rng, b, 2 * b, 3, 2, 1),
            down2: Conv2d::new(rng, 2 * b, 4 * b, 3, 2, 1),
            mid: Conv2d::new(rng, 4 * b, 4 * b, 3, 1, 1),
            up1: Conv2d::new(rng, 4 * b + 2 * b, 2 * b, 3, 1, 1),
            up2: Conv2d::new(rng, 2 * b + b, b, 3, 1, 1),
            head: Conv2d::zeroed(b, c, 3, 1, 1),
            proj: stage_channels
                .iter()
                .map(|&ch| Linear::new(rng, e, ch))
                .collect(),
            time_mlp1: Linear::new(rng, e, e),
            time_mlp2: Linear::new(rng, e, e),
            class_emb: Tensor::new(vec![cfg.num_classes, e], class_emb_data)?,
            frozen: false,
            cfg,
        })
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn upload(&self, g: &mut Graph<T>, trainable: bool) -> DenoiserRefs {
        DenoiserRefs {
            conv_in: self.conv_in.upload(g, trainable),
            down1: self.down1.upload(g, trainable),
            down2: self.down2.upload(g, trainable),
            mid: self.mid.upload(g, trainable),
            up1: self.up1.upload(g, trainable),
            up2: self.up2.upload(g, trainable),
            head: self.head.upload(g, trainable),
            proj: self.proj.iter().map(|p| p.upload(g, trainable)).collect(),
            time_mlp1: self.time_mlp1.upload(g, trainable),
            time_mlp2: self.time_mlp2.upload(g, trainable),
            class_emb: g.leaf(self.class_emb.clone(), trainable),
        }
    }

    /// Run the network over a recorded graph.
    ///
    /// `x` is `[n, c, h, w]`; `classes` and `ts` hold one entry per sample.
    /// `prompt` is an optional `[K, emb_dim]` additive offset on the class
    /// embedding table (learned conditioning offsets).
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        refs: &DenoiserRefs,
        x: Var,
        classes: &[usize],
        ts: &[u32],
        prompt: Option<Var>,
    ) -> Result<Var> {
        let n = g.value(x).shape()[0];
        if classes.len() != n || ts.len() != n {
            return Err(Error::InvalidArgument(format!(
                "forward: batch {n} with {} classes and {} timesteps",
                classes.len(),
                ts.len()
            )));
        }
        if let Some(&bad) = classes.iter().find(|&&c| c >= self.cfg.num_classes) {
            return Err(Error::ClassOutOfRange {
                class: bad,
                num_classes: self.cfg.num_classes,
            });
        }

        // conditioning vector per sample
        let temb_raw = g.constant(time_embedding_batch::<T>(ts, self.cfg.emb_dim));
        let t1 = refs.time_mlp1.apply(g, temb_raw)?;
        let t1 = g.silu(t1)?;
        let temb = refs.time_mlp2.apply(g, t1)?;
        let table = match prompt {
            Some(p) => g.add(refs.class_emb, p)?,
            None => refs.class_emb,
        };
        let cemb = g.embedding(table, classes)?;
        let emb = g.add(temb, cemb)?;

        let stage = |g: &mut Graph<T>, conv: &Conv2dRef, proj: &LinearRef, x: Var| -> Result<Var> {
            let h = conv.apply(g, x)?;
            let bias = proj.apply(g, emb)?;
            let h = g.add_chan_bias(h, bias)?;
            Ok(g.silu(h)?)
        };

        let e0 = stage(g, &refs.conv_in, &refs.proj[0], x)?;
        let e1 = stage(g, &refs.down1, &refs.proj[1], e0)?;
        let e2 = stage(g, &refs.down2, &refs.proj[2], e1)?;
        let m = stage(g, &refs.mid, &refs.proj[3], e2)?;

        let u = g.upsample2x(m)?;
        let cat = g.concat_channels(u, e1)?;
        let d1 = stage(g, &refs.up1, &refs.proj[4], cat)?;

        let u = g.upsample2x(d1)?;
        let cat = g.concat_channels(u, e0)?;
        let d0 = stage(g, &refs.up2, &refs.proj[5], cat)?;

        refs.head.apply(g, d0)
    }

    /// Noise prediction for a batch of noisy images; no gradients recorded.
    pub fn predict_batch(
        &self,
        xt: &Tensor<T>,
        classes: &[usize],
        ts: &[u32],
        prompt: Option<&Tensor<T>>,
    ) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let refs = self.upload(&mut g, false);
        let xv = g.constant(xt.clone());
        let pv = prompt.map(|p| g.constant(p.clone()));
        let out = self.forward(&mut g, &refs, xv, classes, ts, pv)?;
        Ok(g.value(out).clone())
    }

    /// Single-image noise prediction: `xt` is `[c, h, w]`.
    pub fn predict(
        &self,
        xt: &Tensor<T>,
        class: usize,
        t: u32,
        prompt: Option<&Tensor<T>>,
    ) -> Result<Tensor<T>> {
        let mut shape = vec![1];
        shape.extend_from_slice(xt.shape());
        let batched = xt.reshaped(shape)?;
        let out = self.predict_batch(&batched, &[class], &[t], prompt)?;
        Ok(out.reshaped(xt.shape().to_vec())?)
    }

    /// Trainable tensors, in the fixed order mirrored by [`Self::collect_grads`].
    pub fn trainable_params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v: Vec<&mut Tensor<T>> = vec![
            &mut self.conv_in.w,
            &mut self.conv_in.b,
            &mut self.down1.w,
            &mut self.down1.b,
            &mut self.down2.w,
            &mut self.down2.b,
            &mut self.mid.w,
            &mut self.mid.b,
            &mut self.up1.w,
            &mut self.up1.b,
            &mut self.up2.w,
            &mut self.up2.b,
            &mut self.head.w,
            &mut self.head.b,
        ];
        for p in &mut self.proj {
            v.push(&mut p.w);
            v.push(&mut p.b);
        }
        v.push(&mut self.time_mlp1.w);
        v.push(&mut self.time_mlp1.b);
        v.push(&mut self.time_mlp2.w);
        v.push(&mut self.time_mlp2.b);
        v.push(&mut self.class_emb);
        v
    }

    /// Gradients after `backward`, ordered like [`Self::trainable_params_mut`].
    pub fn collect_grads(&self, g: &Graph<T>, refs: &DenoiserRefs) -> Result<Vec<Tensor<T>>> {
        let mut vars = vec![
            refs.conv_in.w,
            refs.conv_in.b,
            refs.down1.w,
            refs.down1.b,
            refs.down2.w,
            refs.down2.b,
            refs.mid.w,
            refs.mid.b,
            refs.up1.w,
            refs.up1.b,
            refs.up2.w,
            refs.up2.b,
            refs.head.w,
            refs.head.b,
        ];
        for p in &refs.proj {
            vars.push(p.w);
            vars.push(p.b);
        }
        vars.push(refs.time_mlp1.w);
        vars.push(refs.time_mlp1.b);
        vars.push(refs.time_mlp2.w);
        vars.push(refs.time_mlp2.b);
        vars.push(refs.class_emb);
        vars.into_iter()
            .map(|v| {
                g.grad(v).cloned().ok_or_else(|| {
                    Error::InvalidArgument("missing gradient; was the upload trainable?".into())
                })
            })
            .collect()
    }

    fn tensor_names(&self) -> Vec<String> {
        let mut names: Vec<String> = [
            "conv_in", "down1", "down2", "mid", "up1", "up2", "head",
        ]
        .iter()
        .flat_map(|l| [format!("denoiser.{l}.w"), format!("denoiser.{l}.b")])
        .collect();
        for i in 0..self.proj.len() {
            names.push(format!("denoiser.proj{i}.w"));
            names.push(format!("denoiser.proj{i}.b"));
        }
        names.push("denoiser.time_mlp1.w".into());
        names.push("denoiser.time_mlp1.b".into());
        names.push("denoiser.time_mlp2.w".into());
        names.push("denoiser.time_mlp2.b".into());
        names.push("denoiser.class_emb".into());
        names
    }

    /// All weight tensors with their checkpoint names.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let refs: Vec<&Tensor<T>> = vec![
            &self.conv_in.w,
            &self.conv_in.b,
            &self.down1.w,
            &self.down1.b,
            &self.down2.w,
            &self.down2.b,
            &self.mid.w,
            &self.mid.b,
            &self.up1.w,
            &self.up1.b,
            &self.up2.w,
            &self.up2.b,
            &self.head.w,
            &self.head.b,
        ]
        .into_iter()
        .chain(self.proj.iter().flat_map(|p| [&p.w, &p.b]))
        .chain([
            &self.time_mlp1.w,
            &self.time_mlp1.b,
            &self.time_mlp2.w,
            &self.time_mlp2.b,
            &self.class_emb,
        ])
        .collect();
        self.tensor_names().into_iter().zip(refs).collect()
    }

    /// Write the weights as a `NOCK1` checkpoint.
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let named = self.named_tensors();
        let entries: Vec<(&str, &Tensor<T>)> =
            named.iter().map(|(n, t)| (n.as_str(), *t)).collect();
        checkpoint::save_tensors(path, &entries)?;
        Ok(())
    }

    /// Load weights saved by [`Self::save`]; architecture comes from `cfg`
    /// (checkpoints carry tensors only). The loaded model is frozen.
    pub fn load<P: AsRef<Path>>(path: P, cfg: DenoiserConfig) -> Result<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = Self::new(cfg, &mut rng)?;
        let map = checkpoint::load_tensor_map::<T, _>(&path)?;
        let names = model.tensor_names();
        for (name, dst) in names.iter().zip(model.trainable_params_mut()) {
            let src = map
                .get(name)
                .ok_or_else(|| Error::Format(format!("checkpoint missing tensor {name}")))?;
            if src.shape() != dst.shape() {
                return Err(Error::Format(format!(
                    "checkpoint tensor {name} has shape {:?}, expected {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.clone();
        }
        model.frozen = true;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> DenoiserConfig {
        DenoiserConfig {
            num_classes: 3,
            in_channels: 1,
            image_size: 8,
            base_channels: 4,
            emb_dim: 8,
        }
    }

    #[test]
    fn untrained_model_predicts_zero_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Denoiser::<f64>::new(tiny_cfg(), &mut rng).unwrap();
        let xt = Tensor::randn(&mut rng, &[1, 8, 8]);
        let out = model.predict(&xt, 1, 250, None).unwrap();
        assert_eq!(out.shape(), &[1, 8, 8]);
        assert!(out.data().iter().all(|&v| v == 0.0), "zero-init head");
    }

    #[test]
    fn eval_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut model = Denoiser::<f32>::new(tiny_cfg(), &mut rng).unwrap();
        // knock the head off zero so the output is nontrivial
        for v in model.head.w.data_mut() {
            *v = 0.01;
        }
        let xt = Tensor::randn(&mut rng, &[1, 8, 8]);
        let a = model.predict(&xt, 0, 100, None).unwrap();
        let b = model.predict(&xt, 0, 100, None).unwrap();
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn batched_and_single_predictions_agree_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = Denoiser::<f32>::new(tiny_cfg(), &mut rng).unwrap();
        for v in model.head.w.data_mut() {
            *v = 0.02;
        }
        let imgs: Vec<Tensor<f32>> = (0..3).map(|_| Tensor::randn(&mut rng, &[1, 8, 8])).collect();

        let mut flat = Vec::new();
        for img in &imgs {
            flat.extend_from_slice(img.data());
        }
        let batch = Tensor::new(vec![3, 1, 8, 8], flat).unwrap();
        let out = model
            .predict_batch(&batch, &[0, 1, 2], &[50, 60, 70], None)
            .unwrap();

        for (i, img) in imgs.iter().enumerate() {
            let single = model.predict(img, i, 50 + 10 * i as u32, None).unwrap();
            let from_batch = &out.data()[i * 64..(i + 1) * 64];
            for (a, b) in single.data().iter().zip(from_batch.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn class_out_of_range_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = Denoiser::<f64>::new(tiny_cfg(), &mut rng).unwrap();
        let xt = Tensor::randn(&mut rng, &[1, 8, 8]);
        assert!(matches!(
            model.predict(&xt, 3, 100, None),
            Err(Error::ClassOutOfRange { .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.nock");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = Denoiser::<f32>::new(tiny_cfg(), &mut rng).unwrap();
        for v in model.head.w.data_mut() {
            *v = -0.03;
        }
        model.save(&path).unwrap();
        let loaded = Denoiser::<f32>::load(&path, tiny_cfg()).unwrap();
        assert!(loaded.is_frozen());

        let xt = Tensor::randn(&mut rng, &[1, 8, 8]);
        let a = model.predict(&xt, 2, 123, None).unwrap();
        let b = loaded.predict(&xt, 2, 123, None).unwrap();
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn prompt_offsets_shift_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut model = Denoiser::<f32>::new(tiny_cfg(), &mut rng).unwrap();
        for v in model.head.w.data_mut() {
            *v = 0.05;
        }
        let xt = Tensor::randn(&mut rng, &[1, 8, 8]);
        let zero_prompt = Tensor::zeros(&[3, 8]);
        let base = model.predict(&xt, 1, 200, None).unwrap();
        let with_zero = model.predict(&xt, 1, 200, Some(&zero_prompt)).unwrap();
        assert!(base.bit_eq(&with_zero), "zero offsets are the identity");

        let prompt = Tensor::full(&[3, 8], 0.5f32);
        let shifted = model.predict(&xt, 1, 200, Some(&prompt)).unwrap();
        assert!(base.max_abs_diff(&shifted) > 0.0);
    }
}
