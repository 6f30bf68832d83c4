//! Synthetic image datasets, few-shot splits, and the `NDS1` on-disk format.

mod format;
mod gen;

pub use format::{load_dataset, save_dataset, save_pgm};
pub use gen::{gen_dataset, gen_shapes, gen_shapes_shifted, gen_textures, GeneratorKind};

use ndgrad::{Scalar, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Labeled image collection. Images are `[c, h, w]` with values in [-1, 1].
#[derive(Debug, Clone)]
pub struct Dataset<T: Scalar> {
    pub images: Vec<Tensor<T>>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Generator spec and seed, or the source file for loaded datasets.
    pub provenance: String,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    /// Check the container invariants: label range, non-empty classes,
    /// pixel range, and per-image shape.
    pub fn validate(&self) -> Result<()> {
        let k = self.num_classes();
        if self.images.len() != self.labels.len() {
            return Err(Error::Dataset(format!(
                "{} images but {} labels",
                self.images.len(),
                self.labels.len()
            )));
        }
        let mut seen = vec![false; k];
        for &l in &self.labels {
            if l >= k {
                return Err(Error::Dataset(format!("label {l} out of range for {k} classes")));
            }
            seen[l] = true;
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::Dataset("some class has no samples".into()));
        }
        let shape = [self.channels, self.height, self.width];
        for (i, img) in self.images.iter().enumerate() {
            if img.shape() != shape {
                return Err(Error::Dataset(format!(
                    "image {i} has shape {:?}, expected {:?}",
                    img.shape(),
                    shape
                )));
            }
            if !img
                .data()
                .iter()
                .all(|v| (-1.0..=1.0).contains(&v.as_f64()))
            {
                return Err(Error::Dataset(format!("image {i} has pixels outside [-1, 1]")));
            }
        }
        Ok(())
    }

    /// Number of samples per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes()];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Stack the given indices into an `[n, c, h, w]` batch tensor.
    pub fn stack(&self, indices: &[usize]) -> Result<Tensor<T>> {
        if indices.is_empty() {
            return Err(Error::Dataset("cannot stack an empty index set".into()));
        }
        let per = self.channels * self.height * self.width;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(self.images[i].data());
        }
        Ok(Tensor::new(
            vec![indices.len(), self.channels, self.height, self.width],
            data,
        )?)
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// Convert element precision (pixel values are f32-exact by construction).
    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            images: self.images.iter().map(|t| t.cast()).collect(),
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
            height: self.height,
            width: self.width,
            channels: self.channels,
            provenance: self.provenance.clone(),
        }
    }
}

/// Index split with exactly `shots` training samples per class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Uniform per-class sampling without replacement; the remainder is the
/// test set. Requires every class to have strictly more than `shots` samples.
pub fn few_shot_split<T: Scalar>(
    ds: &Dataset<T>,
    shots: usize,
    seed: u64,
) -> Result<FewShotSplit> {
    if shots == 0 {
        return Err(Error::InvalidArgument("shots must be >= 1".into()));
    }
    let k = ds.num_classes();
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in ds.labels.iter().enumerate() {
        per_class[l].push(i);
    }
    for (c, members) in per_class.iter().enumerate() {
        if members.len() <= shots {
            return Err(Error::Dataset(format!(
                "class {c} has {} samples, needs more than {shots}",
                members.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(k * shots);
    let mut in_train = vec![false; ds.len()];
    for members in &mut per_class {
        members.shuffle(&mut rng);
        for &i in members.iter().take(shots) {
            train.push(i);
            in_train[i] = true;
        }
    }
    train.sort_unstable();
    let test: Vec<usize> = (0..ds.len()).filter(|&i| !in_train[i]).collect();
    Ok(FewShotSplit { train, test, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset<f32> {
        gen_shapes(20, 16, 3).unwrap()
    }

    #[test]
    fn split_counts_and_disjointness() {
        let ds = toy();
        let s = few_shot_split(&ds, 16, 9).unwrap();
        assert_eq!(s.train.len(), 64);
        assert_eq!(s.test.len(), ds.len() - 64);
        let mut all: Vec<usize> = s.train.iter().chain(s.test.iter()).copied().collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), ds.len(), "train and test are disjoint and cover");
        // exactly 16 per class in train
        let mut per = vec![0usize; ds.num_classes()];
        for &i in &s.train {
            per[ds.labels[i]] += 1;
        }
        assert!(per.iter().all(|&c| c == 16));
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let ds = toy();
        let a = few_shot_split(&ds, 4, 42).unwrap();
        let b = few_shot_split(&ds, 4, 42).unwrap();
        let c = few_shot_split(&ds, 4, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn shots_of_class_size_minus_one_leaves_one_test_image_per_class() {
        let ds = toy();
        let s = few_shot_split(&ds, 19, 1).unwrap();
        assert_eq!(s.test.len(), ds.num_classes());
    }

    #[test]
    fn insufficient_samples_is_an_error() {
        let ds = toy();
        assert!(few_shot_split(&ds, 20, 1).is_err());
    }

    #[test]
    fn sixteen_shot_default_arithmetic() {
        let ds = gen_shapes::<f32>(200, 16, 11).unwrap();
        let s = few_shot_split(&ds, 16, 0).unwrap();
        assert_eq!(s.train.len(), 64);
        assert_eq!(s.test.len(), 736);
    }
}
