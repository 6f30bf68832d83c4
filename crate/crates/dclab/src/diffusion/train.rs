use ndgrad::{AdamState, Graph, Scalar, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datasets::Dataset;
use crate::error::{Error, Result};

use super::{forward_diffuse, Denoiser, DenoiserConfig, NoiseSchedule};

#[derive(Debug, Clone)]
pub struct DenoiserTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch: 32,
            lr: 1e-3,
            seed: 1,
        }
    }
}

/// Pretrain the conditional denoiser by regressing the injected noise:
/// per sample a uniform timestep and a fresh standard-normal noise, MSE
/// between prediction and the noise. Returns the frozen model and the
/// per-epoch mean loss curve.
pub fn train_denoiser<T: Scalar>(
    ds: &Dataset<T>,
    sched: &NoiseSchedule,
    arch: DenoiserConfig,
    cfg: &DenoiserTrainConfig,
) -> Result<(Denoiser<T>, Vec<f64>)> {
    if ds.is_empty() {
        return Err(Error::Dataset("cannot train on an empty dataset".into()));
    }
    if cfg.batch == 0 || cfg.lr <= 0.0 {
        return Err(Error::InvalidArgument(
            "denoiser training needs batch >= 1 and lr > 0".into(),
        ));
    }
    if arch.num_classes != ds.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "architecture has {} classes, dataset has {}",
            arch.num_classes,
            ds.num_classes()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Denoiser::new(arch, &mut rng)?;
    let mut adam = AdamState::new(T::from_f64(cfg.lr))?;
    let image_len: usize = ds.image_shape().iter().product();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..ds.len()).collect();

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let n = chunk.len();
            let ts: Vec<u32> = (0..n)
                .map(|_| rng.random_range(1..=sched.timesteps()))
                .collect();
            let classes = ds.labels_of(chunk);
            let mut xt_data = Vec::with_capacity(n * image_len);
            let mut eps_data = Vec::with_capacity(n * image_len);
            for (j, &i) in chunk.iter().enumerate() {
                let eps = Tensor::<T>::randn(&mut rng, &ds.image_shape());
                let xt = forward_diffuse(&ds.images[i], ts[j], &eps, sched)?;
                xt_data.extend_from_slice(xt.data());
                eps_data.extend_from_slice(eps.data());
            }
            let mut shape = vec![n];
            shape.extend_from_slice(&ds.image_shape());
            let xt = Tensor::new(shape.clone(), xt_data)?;
            let eps = Tensor::new(shape, eps_data)?;

            let mut g = Graph::new();
            let refs = model.upload(&mut g, true);
            let xt_v = g.constant(xt);
            let eps_v = g.constant(eps);
            let pred = model.forward(&mut g, &refs, xt_v, &classes, &ts, None)?;
            let diff = g.sub(pred, eps_v)?;
            let sq = g.mul(diff, diff)?;
            let loss = g.mean(sq)?;
            epoch_loss += g.value(loss).item().as_f64();
            batches += 1;
            g.backward(loss)?;
            let grads = model.collect_grads(&g, &refs)?;
            adam.step(&mut model.trainable_params_mut(), &grads)?;
        }
        curve.push(epoch_loss / batches.max(1) as f64);
    }
    model.freeze();
    Ok((model, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::gen_shapes;

    fn tiny_arch() -> DenoiserConfig {
        DenoiserConfig {
            num_classes: 4,
            in_channels: 1,
            image_size: 16,
            base_channels: 4,
            emb_dim: 8,
        }
    }

    #[test]
    fn zero_epochs_returns_initialized_model_and_empty_curve() {
        let ds = gen_shapes::<f32>(2, 16, 0).unwrap();
        let sched = NoiseSchedule::linear(100, 1e-4, 2e-2).unwrap();
        let cfg = DenoiserTrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let (model, curve) = train_denoiser(&ds, &sched, tiny_arch(), &cfg).unwrap();
        assert!(curve.is_empty());
        assert!(model.is_frozen());
        // zero-init head means zero predictions
        let pred = model.predict(&ds.images[0], 0, 50, None).unwrap();
        assert!(pred.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let ds = Dataset::<f32> {
            images: vec![],
            labels: vec![],
            class_names: vec!["a".into()],
            height: 16,
            width: 16,
            channels: 1,
            provenance: "test".into(),
        };
        let sched = NoiseSchedule::linear(100, 1e-4, 2e-2).unwrap();
        assert!(train_denoiser(&ds, &sched, tiny_arch(), &Default::default()).is_err());
    }

    #[test]
    fn single_image_overfit_drives_loss_down() {
        // one-sample dataset, enough steps: final loss well under the initial
        let mut ds = gen_shapes::<f32>(1, 8, 3).unwrap();
        ds.images.truncate(1);
        ds.labels.truncate(1);
        ds.class_names.truncate(1);
        let sched = NoiseSchedule::linear(50, 1e-4, 2e-2).unwrap();
        let mut arch = tiny_arch();
        arch.num_classes = 1;
        arch.image_size = 8;
        let cfg = DenoiserTrainConfig {
            epochs: 2000,
            batch: 1,
            lr: 3e-3,
            seed: 5,
        };
        let (_, curve) = train_denoiser(&ds, &sched, arch, &cfg).unwrap();
        let first = curve[0];
        let last = *curve.last().unwrap();
        assert!(
            last < 0.1 * first,
            "expected >10x loss reduction, got {first} -> {last}"
        );
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let ds = gen_shapes::<f32>(3, 16, 2).unwrap();
        let sched = NoiseSchedule::linear(100, 1e-4, 2e-2).unwrap();
        let cfg = DenoiserTrainConfig {
            epochs: 2,
            batch: 4,
            lr: 1e-3,
            seed: 9,
        };
        let (m1, c1) = train_denoiser(&ds, &sched, tiny_arch(), &cfg).unwrap();
        let (m2, c2) = train_denoiser(&ds, &sched, tiny_arch(), &cfg).unwrap();
        assert_eq!(c1, c2);
        for ((_, a), (_, b)) in m1.named_tensors().iter().zip(m2.named_tensors().iter()) {
            assert!(a.bit_eq(b));
        }
    }
}
