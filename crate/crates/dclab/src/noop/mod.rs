//! Noise optimization for the diffusion classifier: a learnable
//! dataset-specific noise, an image-conditioned offset network, and
//! cross-entropy training over z-score-normalized denoising logits.

mod meta;
mod prompt;
mod train;

pub use meta::{MetaNetwork, MetaRefs};
pub use prompt::{train_prompt, PromptOffsets, PromptTrainConfig};
pub use train::{train_noop, NoOpTrainConfig, NoOpTrainMode, NoOpTrainReport};

use std::path::Path;

use ndgrad::{checkpoint, AdamState, Graph, Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datasets::Dataset;
use crate::dc::{argmin, class_distances, ClassScores};
use crate::diffusion::{Denoiser, NoiseSchedule};
use crate::error::{Error, Result};

/// Additive guard on the z-score denominator (shared with the recorded op).
pub const SIGMA_GUARD: f64 = ndgrad::ZSCORE_GUARD;

/// Learnable noise, offset network, and their optimizers.
///
/// The noise is shared across the whole dataset; the meta network produces a
/// per-image offset. Optimizer state is in-memory only; checkpoints hold the
/// noise, the meta network, and any prompt offsets.
#[derive(Debug, Clone)]
pub struct NoOpState<T: Scalar> {
    pub eps: Tensor<T>,
    pub meta: MetaNetwork<T>,
    pub adam_eps: AdamState<T>,
    pub adam_meta: AdamState<T>,
    pub t_fixed: u32,
    pub prompt: Option<PromptOffsets<T>>,
}

impl<T: Scalar> NoOpState<T> {
    /// Fresh state: the noise is a standard-normal draw under `seed`, the
    /// meta network starts as the zero map.
    pub fn new(
        image_shape: &[usize],
        seed: u64,
        lr_eps: f64,
        lr_meta: f64,
        t_fixed: u32,
        meta_base_channels: usize,
    ) -> Result<Self> {
        if image_shape.len() != 3 {
            return Err(Error::InvalidArgument(format!(
                "image shape must be [c, h, w], got {image_shape:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = Tensor::randn(&mut rng, image_shape);
        let meta = MetaNetwork::new(&mut rng, image_shape[0], meta_base_channels);
        Ok(Self {
            eps,
            meta,
            adam_eps: AdamState::new(T::from_f64(lr_eps))?,
            adam_meta: AdamState::new(T::from_f64(lr_meta))?,
            t_fixed,
            prompt: None,
        })
    }

    /// Refined noise for a batch: learnable noise plus the per-image offset
    /// (meta network in eval mode). `x0` is `[n, c, h, w]`.
    pub fn compose_noise_batch(&self, x0: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = x0.shape();
        if shape.len() != 4 || shape[1..] != *self.eps.shape() {
            return Err(Error::InvalidArgument(format!(
                "compose_noise: batch {shape:?} vs noise {:?}",
                self.eps.shape()
            )));
        }
        let offsets = self.meta.offsets(x0)?;
        let per = self.eps.len();
        let data = offsets
            .data()
            .iter()
            .enumerate()
            .map(|(i, &o)| self.eps.data()[i % per] + o)
            .collect();
        Ok(Tensor::new(shape.to_vec(), data)?)
    }

    /// Prompt offsets as an effective `[K, emb]` table, when present.
    pub fn prompt_table(&self) -> Option<Tensor<T>> {
        self.prompt.as_ref().map(|p| p.effective())
    }

    /// Serialize under the reserved names `noop.eps`, `meta.*`, and
    /// `prompt.offsets`.
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let meta_named = self.meta.named_tensors();
        let mut entries: Vec<(String, &Tensor<T>)> = vec![("noop.eps".into(), &self.eps)];
        entries.extend(meta_named);
        let stacked;
        if let Some(p) = &self.prompt {
            stacked = p.stacked();
            entries.push(("prompt.offsets".into(), &stacked));
        }
        let view: Vec<(&str, &Tensor<T>)> =
            entries.iter().map(|(n, t)| (n.as_str(), *t)).collect();
        checkpoint::save_tensors(path, &view)?;
        Ok(())
    }

    /// Load a state saved by [`Self::save`]. Optimizer state restarts fresh;
    /// hyperparameters are the caller's.
    pub fn load<P: AsRef<Path>>(
        path: P,
        lr_eps: f64,
        lr_meta: f64,
        t_fixed: u32,
        meta_base_channels: usize,
    ) -> Result<Self> {
        let map = checkpoint::load_tensor_map::<T, _>(&path)?;
        let eps = map
            .get("noop.eps")
            .ok_or_else(|| Error::Format("checkpoint missing noop.eps".into()))?
            .clone();
        if eps.rank() != 3 {
            return Err(Error::Format("noop.eps must be [c, h, w]".into()));
        }
        let mut state = Self::new(
            &eps.shape().to_vec(),
            0,
            lr_eps,
            lr_meta,
            t_fixed,
            meta_base_channels,
        )?;
        state.eps = eps;
        for (name, dst) in state.meta.named_tensors_mut() {
            let src = map
                .get(&name)
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
        state.prompt = match map.get("prompt.offsets") {
            Some(t) => Some(PromptOffsets::from_stacked(t)?),
            None => None,
        };
        Ok(state)
    }
}

/// Raw logits: the negated squared denoising distances under the refined
/// noise. Bitwise the negation of [`class_distances`] with the same noise.
pub fn noop_logits<T: Scalar, P: crate::dc::NoisePredictor<T>>(
    model: &P,
    x0: &Tensor<T>,
    eps_star: &Tensor<T>,
    t: u32,
    sched: &NoiseSchedule,
) -> Result<Vec<T>> {
    let scores = class_distances(model, x0, t, eps_star, sched, 0)?;
    Ok(scores.distances.into_iter().map(|d| -d).collect())
}

/// Z-score normalization of one logit vector: mean, population standard
/// deviation, and guarded normalized logits.
#[derive(Debug, Clone)]
pub struct NormalizedLogits<T: Scalar> {
    pub p: Vec<T>,
    pub mu: T,
    pub sigma: T,
    pub z: Vec<T>,
}

pub fn zscore<T: Scalar>(p: &[T]) -> Result<NormalizedLogits<T>> {
    if p.len() < 2 {
        return Err(Error::InvalidArgument(
            "z-score needs at least 2 logits".into(),
        ));
    }
    let k = T::from_usize(p.len());
    let mu = p.iter().copied().sum::<T>() / k;
    let var = p
        .iter()
        .map(|&v| {
            let d = v - mu;
            d * d
        })
        .sum::<T>()
        / k;
    let sigma = var.sqrt();
    let denom = sigma + T::from_f64(SIGMA_GUARD);
    let z = p.iter().map(|&v| (v - mu) / denom).collect();
    Ok(NormalizedLogits {
        p: p.to_vec(),
        mu,
        sigma,
        z,
    })
}

/// Cross-entropy of one normalized logit vector against its label.
pub fn noop_loss<T: Scalar>(z: &[T], label: usize) -> Result<T> {
    if label >= z.len() {
        return Err(Error::ClassOutOfRange {
            class: label,
            num_classes: z.len(),
        });
    }
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
    Ok(lse - z[label])
}

/// Classify one image with the refined noise; the decision is the argmax of
/// the raw logits, which equals the argmin of the distances.
pub fn classify_noop<T: Scalar>(
    model: &Denoiser<T>,
    state: &NoOpState<T>,
    x0: &Tensor<T>,
    t: u32,
    sched: &NoiseSchedule,
) -> Result<ClassScores<T>> {
    let mut shape = vec![1];
    shape.extend_from_slice(x0.shape());
    let batch = x0.reshaped(shape)?;
    let eps_star = state.compose_noise_batch(&batch)?;
    let eps_star = eps_star.reshaped(x0.shape().to_vec())?;
    let prompt = state.prompt_table();
    let predictor = match &prompt {
        Some(p) => model.predictor_with_prompt(p),
        None => model.predictor(),
    };
    class_distances(&predictor, x0, t, &eps_star, sched, 0)
}

/// Apply a state trained on one dataset to another dataset's test set using
/// that dataset's model. Returns the accuracy and per-image scores.
pub fn transfer_state<T: Scalar>(
    state: &NoOpState<T>,
    model_b: &Denoiser<T>,
    ds_b: &Dataset<T>,
    test_idx: &[usize],
    sched: &NoiseSchedule,
) -> Result<(f64, Vec<ClassScores<T>>)> {
    if ds_b.image_shape() != *state.eps.shape() {
        return Err(Error::InvalidArgument(format!(
            "transfer: dataset images {:?} vs state noise {:?}",
            ds_b.image_shape(),
            state.eps.shape()
        )));
    }
    if test_idx.is_empty() {
        return Err(Error::Dataset("transfer needs a non-empty test set".into()));
    }
    let mut scores = Vec::with_capacity(test_idx.len());
    let mut correct = 0usize;
    for &i in test_idx {
        let s = classify_noop(model_b, state, &ds_b.images[i], state.t_fixed, sched)?;
        if s.predicted == ds_b.labels[i] {
            correct += 1;
        }
        scores.push(s);
    }
    Ok((correct as f64 / test_idx.len() as f64, scores))
}

/// Recorded z-score + cross-entropy consistency helper: the value-level
/// z-score must match the recorded op on the same logits.
pub fn zscore_matches_graph<T: Scalar>(p: &[T]) -> Result<bool> {
    let host = zscore(p)?;
    let mut g = Graph::new();
    let pv = g.constant(Tensor::new(vec![p.len()], p.to_vec())?);
    let zv = g.zscore(pv)?;
    Ok(g.value(zv)
        .data()
        .iter()
        .zip(host.z.iter())
        .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dc::FnPredictor;

    #[test]
    fn zscore_two_point_is_plus_minus_one() {
        let n = zscore(&[3.0f64, 1.0]).unwrap();
        assert!((n.z[0] - 1.0).abs() < 1e-9);
        assert!((n.z[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn zscore_equal_logits_gives_zeros() {
        let n = zscore(&[0.5f64; 4]).unwrap();
        assert_eq!(n.sigma, 0.0);
        assert!(n.z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zscore_hand_computed_example() {
        let n = zscore(&[1.0f64, 2.0, 3.0]).unwrap();
        assert!((n.mu - 2.0).abs() < 1e-12);
        assert!((n.sigma - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((n.z[0] + 1.2247).abs() < 1e-4);
        assert!(n.z[1].abs() < 1e-12);
        assert!((n.z[2] - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn zscore_needs_two_entries() {
        assert!(zscore(&[1.0f64]).is_err());
    }

    #[test]
    fn zscore_value_and_graph_paths_agree() {
        assert!(zscore_matches_graph(&[0.3f64, -1.2, 0.9, 0.0]).unwrap());
        assert!(zscore_matches_graph(&[5.0f32, 5.0, 5.0]).unwrap());
    }

    #[test]
    fn loss_of_uniform_logits_is_ln_k() {
        let l = noop_loss(&[0.0f64; 5], 3).unwrap();
        assert!((l - 5.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_saturates_when_the_label_dominates() {
        let l = noop_loss(&[10.0f64, 0.0, 0.0, 0.0], 0).unwrap();
        assert!(l < 1e-4 * 4.0, "loss = {l}");
    }

    #[test]
    fn loss_closed_form_two_class() {
        let l = noop_loss(&[1.0f64, -1.0], 0).unwrap();
        assert!((l - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-12);
        assert!((l - 0.126928).abs() < 1e-5);
    }

    #[test]
    fn loss_label_out_of_range() {
        assert!(matches!(
            noop_loss(&[1.0f64, 2.0], 2),
            Err(Error::ClassOutOfRange { .. })
        ));
    }

    #[test]
    fn fresh_state_composes_to_its_own_noise() {
        let state = NoOpState::<f32>::new(&[1, 16, 16], 9, 1e-2, 1e-3, 500, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x0 = Tensor::randn(&mut rng, &[2, 1, 16, 16]);
        let star = state.compose_noise_batch(&x0).unwrap();
        for n in 0..2 {
            let sl = &star.data()[n * 256..(n + 1) * 256];
            for (a, b) in sl.iter().zip(state.eps.data()) {
                assert_eq!(a.to_bits(), b.to_bits(), "zero-init head keeps eps intact");
            }
        }
    }

    #[test]
    fn noise_scaling_is_additive_around_the_offset() {
        // with the meta output fixed, doubling eps doubles (eps_star - offset)
        let mut state = NoOpState::<f64>::new(&[1, 16, 16], 11, 1e-2, 1e-3, 500, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        // give the head nonzero weights so offsets are nontrivial
        {
            let params = state.meta.trainable_params_mut();
            let head_w = params.len() - 2;
            let mut tp = state.meta.trainable_params_mut();
            for v in tp[head_w].data_mut() {
                *v = 0.05;
            }
        }
        let x0 = Tensor::randn(&mut rng, &[1, 1, 16, 16]);
        let offset = state.meta.offsets(&x0).unwrap();
        let star1 = state.compose_noise_batch(&x0).unwrap();
        let doubled: Vec<f64> = state.eps.data().iter().map(|v| v * 2.0).collect();
        state.eps = Tensor::new(vec![1, 16, 16], doubled).unwrap();
        let star2 = state.compose_noise_batch(&x0).unwrap();
        for i in 0..256 {
            let lhs = star2.data()[i] - offset.data()[i];
            let rhs = 2.0 * (star1.data()[i] - offset.data()[i]);
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn noop_logits_are_negated_distances_bitwise() {
        let sched = NoiseSchedule::linear(1000, 1e-4, 2e-2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x0 = Tensor::<f64>::randn(&mut rng, &[1, 8, 8]);
        let eps_star = Tensor::<f64>::randn(&mut rng, &[1, 8, 8]);
        let model = FnPredictor::new(3, |xt: &Tensor<f64>, c, _| {
            let mut out = xt.clone();
            for v in out.data_mut() {
                *v = (*v + c as f64).tanh();
            }
            out
        });
        let p = noop_logits(&model, &x0, &eps_star, 500, &sched).unwrap();
        let d = class_distances(&model, &x0, 500, &eps_star, &sched, 0).unwrap();
        for (pi, di) in p.iter().zip(d.distances.iter()) {
            assert_eq!(pi.to_bits(), (-di).to_bits());
        }
        // argmax(p) == argmin(d)
        let am_p = p
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| {
                if v > acc.1 {
                    (i, v)
                } else {
                    acc
                }
            })
            .0;
        assert_eq!(am_p, argmin(&d.distances));
    }

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn state_checkpoint_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.nock");
        let mut state = NoOpState::<f32>::new(&[1, 16, 16], 21, 1e-2, 1e-3, 500, 4).unwrap();
        state.prompt = Some(PromptOffsets::zeros(4, 1, 8));
        state.save(&path).unwrap();
        let loaded = NoOpState::<f32>::load(&path, 1e-2, 1e-3, 500, 4).unwrap();
        assert!(loaded.eps.bit_eq(&state.eps));
        for ((na, ta), (nb, tb)) in state
            .meta
            .named_tensors()
            .iter()
            .zip(loaded.meta.named_tensors().iter())
        {
            assert_eq!(na, nb);
            assert!(ta.bit_eq(tb), "mismatch in {na}");
        }
        assert!(loaded.prompt.is_some());
    }
}
