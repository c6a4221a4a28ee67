//! Datasets, the IDX image format, synthetic sample pairs and mini-batching.

mod idx;
mod synth;

pub use idx::{IdxArray, IMAGE_MAGIC, LABEL_MAGIC};
pub use synth::{synth_appendix_uniform_pair, synth_gaussian_pair, synth_uniform};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Labeled images, either `[N×C×H×W]` or flattened `[N×d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if images.rank() < 2 || images.shape()[0] != labels.len() {
            return Err(Error::dim("dataset", format!("images {:?} for {} labels", images.shape(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Format(format!("label {bad} outside [0, {class_count})")));
        }
        Ok(Dataset { images, labels, class_count })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Values per sample.
    pub fn features(&self) -> usize {
        self.images.shape()[1..].iter().product()
    }

    /// The same data as `[N×d]`.
    pub fn flatten(self) -> Result<Self> {
        let (n, d) = (self.len(), self.features());
        Ok(Dataset { images: self.images.reshape(vec![n, d])?, ..self })
    }

    /// The first `n` samples.
    pub fn take(&self, n: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let images = self.images.select_rows(idx)?;
        Ok(Dataset { images, labels: idx.iter().map(|&i| self.labels[i]).collect(), class_count: self.class_count })
    }

    /// Flattened rows and labels for one batch of indices.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let b = self.subset(idx)?;
        let (n, d) = (b.len(), b.features());
        Ok((b.images.reshape(vec![n, d])?, b.labels))
    }
}

/// Reads an IDX image file (magic 2051) and label file (magic 2049) into
/// `[N×1×H×W]` images scaled to `[0, 1]`.
pub fn load_idx<T: Scalar>(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset<T>> {
    let img = IdxArray::read(images, IMAGE_MAGIC)?;
    let lab = IdxArray::read(labels, LABEL_MAGIC)?;
    dataset_from_idx(&img, &lab)
}

pub fn dataset_from_idx<T: Scalar>(img: &IdxArray, lab: &IdxArray) -> Result<Dataset<T>> {
    if img.dims.len() != 3 || lab.dims.len() != 1 {
        return Err(Error::Format(format!("expected 3-D images and 1-D labels, got {:?} and {:?}", img.dims, lab.dims)));
    }
    if img.dims[0] != lab.dims[0] {
        return Err(Error::Format(format!("{} images but {} labels", img.dims[0], lab.dims[0])));
    }
    let scale = T::of(1.0 / 255.0);
    let data = img.data.iter().map(|&b| T::of(b as f64) * scale).collect();
    let images = Tensor::new(vec![img.dims[0], 1, img.dims[1], img.dims[2]], data)?;
    let labels: Vec<usize> = lab.data.iter().map(|&l| l as usize).collect();
    Dataset::new(images, labels, 10)
}

/// How an epoch is cut into mini-batches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub seed: u64,
    pub batch_size: usize,
    pub drop_last: bool,
}

/// Index batches for one epoch: a permutation seeded by `seed ⊕ epoch`, cut
/// into `batch_size` chunks (the short tail kept unless `drop_last`).
pub fn batches(n: usize, plan: &BatchPlan, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if plan.batch_size == 0 || plan.batch_size > n {
        return Err(Error::Contract(format!("batch size {} invalid for {n} samples", plan.batch_size)));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(plan.seed ^ epoch));
    Ok(order
        .chunks(plan.batch_size)
        .filter(|c| !plan.drop_last || c.len() == plan.batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}
