//! Diffusion Classifier decision rule: noise an image, ask the denoiser to
//! undo it under every class condition, and pick the class whose prediction
//! is closest to the true noise. Includes single-noise and ensemble variants
//! plus the noise-instability probe.

use ndgrad::{Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datasets::Dataset;
use crate::diffusion::{forward_diffuse, Denoiser, NoiseSchedule};
use crate::error::{Error, Result};

/// Anything that can predict the injected noise given a class condition.
///
/// The denoiser implements this via [`Denoiser::predictor`]; tests use
/// closure-backed oracles.
pub trait NoisePredictor<T: Scalar> {
    fn num_classes(&self) -> usize;

    fn predict(&self, xt: &Tensor<T>, class: usize, t: u32) -> Result<Tensor<T>>;

    /// One prediction per class; overridden by the denoiser with a single
    /// batched pass (bitwise identical to the per-class loop).
    fn predict_all(&self, xt: &Tensor<T>, t: u32) -> Result<Vec<Tensor<T>>> {
        (0..self.num_classes())
            .map(|c| self.predict(xt, c, t))
            .collect()
    }
}

/// A denoiser with an optional learned conditioning offset table.
pub struct Conditioned<'a, T: Scalar> {
    pub model: &'a Denoiser<T>,
    pub prompt: Option<&'a Tensor<T>>,
}

impl<T: Scalar> Denoiser<T> {
    pub fn predictor(&self) -> Conditioned<'_, T> {
        Conditioned {
            model: self,
            prompt: None,
        }
    }

    pub fn predictor_with_prompt<'a>(&'a self, prompt: &'a Tensor<T>) -> Conditioned<'a, T> {
        Conditioned {
            model: self,
            prompt: Some(prompt),
        }
    }
}

impl<T: Scalar> NoisePredictor<T> for Conditioned<'_, T> {
    fn num_classes(&self) -> usize {
        self.model.cfg.num_classes
    }

    fn predict(&self, xt: &Tensor<T>, class: usize, t: u32) -> Result<Tensor<T>> {
        self.model.predict(xt, class, t, self.prompt)
    }

    fn predict_all(&self, xt: &Tensor<T>, t: u32) -> Result<Vec<Tensor<T>>> {
        let k = self.num_classes();
        let mut shape = vec![k];
        shape.extend_from_slice(xt.shape());
        let per = xt.len();
        let mut data = Vec::with_capacity(k * per);
        for _ in 0..k {
            data.extend_from_slice(xt.data());
        }
        let batch = Tensor::new(shape, data)?;
        let classes: Vec<usize> = (0..k).collect();
        let ts = vec![t; k];
        let out = self.model.predict_batch(&batch, &classes, &ts, self.prompt)?;
        (0..k)
            .map(|c| {
                Ok(Tensor::new(
                    xt.shape().to_vec(),
                    out.data()[c * per..(c + 1) * per].to_vec(),
                )?)
            })
            .collect()
    }
}

/// Closure-backed predictor for tests and constructed oracles.
pub struct FnPredictor<T: Scalar, F>
where
    F: Fn(&Tensor<T>, usize, u32) -> Tensor<T>,
{
    pub num_classes: usize,
    pub f: F,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar, F> FnPredictor<T, F>
where
    F: Fn(&Tensor<T>, usize, u32) -> Tensor<T>,
{
    pub fn new(num_classes: usize, f: F) -> Self {
        Self {
            num_classes,
            f,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<T: Scalar, F> NoisePredictor<T> for FnPredictor<T, F>
where
    F: Fn(&Tensor<T>, usize, u32) -> Tensor<T>,
{
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn predict(&self, xt: &Tensor<T>, class: usize, t: u32) -> Result<Tensor<T>> {
        Ok((self.f)(xt, class, t))
    }
}

/// Unnormalized squared L2 distance, flat over all elements in index order.
pub fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b.iter()) {
        let d = x - y;
        s += d * d;
    }
    s
}

/// Argmin with ties broken by the lowest index.
pub fn argmin<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate().skip(1) {
        if *v < xs[best] {
            best = i;
        }
    }
    best
}

/// Per-class denoising distances for one image at one (t, noise) pair.
#[derive(Debug, Clone)]
pub struct ClassScores<T: Scalar> {
    pub distances: Vec<T>,
    pub predicted: usize,
    pub t_used: u32,
    pub noise_id: u64,
}

/// Evaluate the decision rule: `eps_ref` is the exact noise used to form
/// `x_t`; the predicted class minimizes the squared distance between the
/// class-conditional prediction and that noise.
pub fn class_distances<T: Scalar, P: NoisePredictor<T>>(
    model: &P,
    x0: &Tensor<T>,
    t: u32,
    eps_ref: &Tensor<T>,
    sched: &NoiseSchedule,
    noise_id: u64,
) -> Result<ClassScores<T>> {
    if model.num_classes() == 0 {
        return Err(Error::InvalidArgument("classifier needs >= 1 class".into()));
    }
    let xt = forward_diffuse(x0, t, eps_ref, sched)?;
    let preds = model.predict_all(&xt, t)?;
    let distances: Vec<T> = preds
        .iter()
        .map(|p| {
            if p.shape() != eps_ref.shape() {
                return Err(Error::InvalidArgument(format!(
                    "prediction shape {:?} vs noise shape {:?}",
                    p.shape(),
                    eps_ref.shape()
                )));
            }
            Ok(sq_dist(p.data(), eps_ref.data()))
        })
        .collect::<Result<_>>()?;
    let predicted = argmin(&distances);
    Ok(ClassScores {
        distances,
        predicted,
        t_used: t,
        noise_id,
    })
}

/// Monte-Carlo ensemble over every (t, noise) pair: per-class mean distance,
/// argmin decision with lowest-index tie-break. Means are accumulated in f64.
pub fn classify_ensemble<T: Scalar, P: NoisePredictor<T>>(
    model: &P,
    x0: &Tensor<T>,
    t_list: &[u32],
    noise_list: &[Tensor<T>],
    sched: &NoiseSchedule,
) -> Result<(usize, Vec<f64>)> {
    if t_list.is_empty() || noise_list.is_empty() {
        return Err(Error::InvalidArgument(
            "ensemble needs at least one timestep and one noise".into(),
        ));
    }
    let k = model.num_classes();
    let mut sums = vec![0.0f64; k];
    for &t in t_list {
        for (i, eps) in noise_list.iter().enumerate() {
            let scores = class_distances(model, x0, t, eps, sched, i as u64)?;
            for (s, d) in sums.iter_mut().zip(scores.distances.iter()) {
                *s += d.as_f64();
            }
        }
    }
    let n = (t_list.len() * noise_list.len()) as f64;
    let means: Vec<f64> = sums.into_iter().map(|s| s / n).collect();
    Ok((argmin(&means), means))
}

/// Prediction variability across independently drawn noises.
#[derive(Debug, Clone)]
pub struct InstabilityReport {
    pub per_seed_accuracy: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Fraction of test images whose prediction differs across any pair of
    /// seeds.
    pub flip_rate: f64,
    /// Per-seed, per-image predictions, in test-index order.
    pub predictions: Vec<Vec<usize>>,
}

/// Classify the test set once per seed, drawing one fresh noise per image
/// per seed, and report accuracy spread and prediction flips.
pub fn instability_probe<T: Scalar, P: NoisePredictor<T>>(
    model: &P,
    ds: &Dataset<T>,
    test_idx: &[usize],
    t: u32,
    seeds: &[u64],
    sched: &NoiseSchedule,
) -> Result<InstabilityReport> {
    if seeds.len() < 2 {
        return Err(Error::InvalidArgument(
            "instability probe needs at least 2 seeds".into(),
        ));
    }
    if test_idx.is_empty() {
        return Err(Error::Dataset("instability probe needs a non-empty test set".into()));
    }
    let mut predictions = Vec::with_capacity(seeds.len());
    let mut accuracies = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut preds = Vec::with_capacity(test_idx.len());
        let mut correct = 0usize;
        for &i in test_idx {
            let eps = Tensor::<T>::randn(&mut rng, &ds.images[i].shape().to_vec());
            let scores = class_distances(model, &ds.images[i], t, &eps, sched, seed)?;
            if scores.predicted == ds.labels[i] {
                correct += 1;
            }
            preds.push(scores.predicted);
        }
        accuracies.push(correct as f64 / test_idx.len() as f64);
        predictions.push(preds);
    }
    let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    let var = accuracies.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
        / accuracies.len() as f64;
    let flips = (0..test_idx.len())
        .filter(|&j| {
            let first = predictions[0][j];
            predictions.iter().any(|p| p[j] != first)
        })
        .count();
    Ok(InstabilityReport {
        per_seed_accuracy: accuracies,
        mean,
        std: var.sqrt(),
        flip_rate: flips as f64 / test_idx.len() as f64,
        predictions,
    })
}
