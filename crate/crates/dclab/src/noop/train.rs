use ndgrad::{Graph, Scalar};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datasets::Dataset;
use crate::diffusion::{forward_diffuse_var, Denoiser, NoiseSchedule};
use crate::error::{Error, Result};
use crate::spectral::high_freq_ratio;

use super::NoOpState;

/// Which parameters the optimization touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoOpTrainMode {
    /// Learnable noise and meta network together.
    Full,
    /// Only the dataset noise; the meta network stays out of the loop.
    NoiseOnly,
    /// Only the meta network; the noise stays at its initialization.
    MetaOnly,
}

impl std::str::FromStr for NoOpTrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(NoOpTrainMode::Full),
            "noise-only" => Ok(NoOpTrainMode::NoiseOnly),
            "meta-only" => Ok(NoOpTrainMode::MetaOnly),
            other => Err(Error::Config(format!(
                "unknown training mode {other:?}; expected full, noise-only, or meta-only"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NoOpTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub mode: NoOpTrainMode,
    /// Seed of the epoch shuffles (the noise initialization seed lives in
    /// [`NoOpState::new`]).
    pub shuffle_seed: u64,
}

impl Default for NoOpTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch: 32,
            mode: NoOpTrainMode::Full,
            shuffle_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NoOpTrainReport {
    /// Mean cross-entropy per epoch.
    pub epoch_loss: Vec<f64>,
    /// High-frequency ratio of the learnable noise at cutoff 0.3; entry 0 is
    /// the pre-training value, then one entry per epoch.
    pub noise_hf_ratio: Vec<f64>,
}

/// Optimize the state on a few-shot training set against a frozen denoiser.
///
/// Per step: compose the refined noise, diffuse the batch at the fixed
/// timestep, score every class, z-score the negated distances, and take a
/// cross-entropy step. The noise and the meta network are updated by their
/// own optimizers (different learning rates); the denoiser receives no
/// gradient at all.
pub fn train_noop<T: Scalar>(
    ds: &Dataset<T>,
    train_idx: &[usize],
    model: &Denoiser<T>,
    state: &mut NoOpState<T>,
    sched: &NoiseSchedule,
    cfg: &NoOpTrainConfig,
) -> Result<NoOpTrainReport> {
    if train_idx.is_empty() {
        return Err(Error::Dataset("noise optimization needs a non-empty training set".into()));
    }
    if !model.is_frozen() {
        return Err(Error::ModelNotFrozen);
    }
    if cfg.batch == 0 {
        return Err(Error::InvalidArgument("batch must be >= 1".into()));
    }
    if ds.image_shape() != *state.eps.shape() {
        return Err(Error::InvalidArgument(format!(
            "dataset images {:?} vs state noise {:?}",
            ds.image_shape(),
            state.eps.shape()
        )));
    }
    let k = model.cfg.num_classes;
    let t = state.t_fixed;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order = train_idx.to_vec();
    let mut report = NoOpTrainReport {
        epoch_loss: Vec::with_capacity(cfg.epochs),
        noise_hf_ratio: Vec::with_capacity(cfg.epochs + 1),
    };
    report.noise_hf_ratio.push(high_freq_ratio(&state.eps, 0.3)?);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let n = chunk.len();
            let labels = ds.labels_of(chunk);
            let x0 = ds.stack(chunk)?;

            let mut g = Graph::new();
            let x0v = g.constant(x0);
            let train_eps = cfg.mode != NoOpTrainMode::MetaOnly;
            let eps_leaf = g.leaf(state.eps.clone(), train_eps);
            let mut eps_shape = vec![1];
            eps_shape.extend_from_slice(state.eps.shape());
            let eps_row = g.reshape(eps_leaf, eps_shape)?;
            let eps_b = g.repeat_rows(eps_row, n)?;

            let (eps_star, meta_refs) = match cfg.mode {
                NoOpTrainMode::NoiseOnly => (eps_b, None),
                _ => {
                    let (offset, refs) = state.meta.forward_train(&mut g, x0v)?;
                    (g.add(eps_b, offset)?, Some(refs))
                }
            };

            let xt = forward_diffuse_var(&mut g, x0v, t, eps_star, sched)?;
            let xt_rep = g.repeat_rows(xt, k)?;
            let star_rep = g.repeat_rows(eps_star, k)?;
            let classes: Vec<usize> = (0..n).flat_map(|_| 0..k).collect();
            let ts = vec![t; n * k];

            let drefs = model.upload(&mut g, false);
            let pred = model.forward(&mut g, &drefs, xt_rep, &classes, &ts, None)?;
            let diff = g.sub(star_rep, pred)?;
            let sq = g.mul(diff, diff)?;
            let per = g.sum_rows(sq)?;
            let dmat = g.reshape(per, vec![n, k])?;
            let logits = g.scale(dmat, -T::one())?;
            let z = g.zscore(logits)?;
            let loss = g.cross_entropy_mean(z, &labels)?;

            epoch_loss += g.value(loss).item().as_f64();
            batches += 1;
            g.backward(loss)?;

            if train_eps {
                let grad = g.grad(eps_leaf).cloned().ok_or_else(|| {
                    Error::InvalidArgument("missing gradient for the learnable noise".into())
                })?;
                state.adam_eps.step(&mut [&mut state.eps], &[grad])?;
            }
            if let Some(refs) = meta_refs {
                let grads = state.meta.collect_grads(&g, &refs)?;
                state.adam_meta.step(&mut state.meta.trainable_params_mut(), &grads)?;
            }
        }
        report.epoch_loss.push(epoch_loss / batches.max(1) as f64);
        report.noise_hf_ratio.push(high_freq_ratio(&state.eps, 0.3)?);
    }
    Ok(report)
}
