use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::manifest::{Manifest, Split};
use crate::dtype::Scalar;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One split held in memory as a single `[N, H, W, C]` tensor.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

pub fn one_hot<T: Scalar>(labels: &[usize], k: usize) -> Tensor<T> {
    let mut t = Tensor::zeros([labels.len(), k]);
    for (i, &l) in labels.iter().enumerate() {
        t.data_mut()[i * k + l] = T::one();
    }
    t
}

impl SplitData {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let (n, ..) = images.dims4("SplitData")?;
        if n != labels.len() {
            return Err(Error::Data(format!("{n} images but {} labels", labels.len())));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Data(format!("label {l} out of range for {num_classes} classes")));
        }
        Ok(Self {
            images,
            labels,
            num_classes,
        })
    }

    /// Load every image of `split`. All images must share one shape.
    pub fn load(manifest: &Manifest, split: Split) -> Result<Self> {
        let idx = manifest.indices(split);
        if idx.is_empty() {
            return Err(Error::Data(format!("split {split:?} is empty")));
        }
        let images: Vec<Tensor<f32>> = idx.par_iter().map(|&i| manifest.load_image(i)).collect::<Result<_>>()?;
        let shape = images[0].shape().to_vec();
        if let Some(pos) = images.iter().position(|t| t.shape() != shape.as_slice()) {
            return Err(Error::Data(format!(
                "{} has shape {:?}, expected {shape:?}",
                manifest.path_of(idx[pos]).display(),
                images[pos].shape()
            )));
        }
        let refs: Vec<&Tensor<f32>> = images.iter().collect();
        let images = Tensor::stack(&refs)?;
        let labels = idx.iter().map(|&i| manifest.samples[i].label).collect();
        Self::new(images, labels, manifest.num_classes())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(images, one-hot targets)` for the given sample indices.
    pub fn batch<T: Scalar>(&self, idx: &[usize]) -> (Tensor<T>, Tensor<T>) {
        let labels: Vec<usize> = idx.iter().map(|&i| self.labels[i]).collect();
        (self.images.gather_rows(idx).cast(), one_hot(&labels, self.num_classes))
    }
}

/// Index batches over `0..n`, shuffled when an RNG is supplied. The last
/// batch may be short.
#[derive(Debug, Clone)]
pub struct Batches {
    order: Vec<usize>,
    size: usize,
    pos: usize,
}

impl Batches {
    pub fn new(n: usize, size: usize, rng: Option<&mut ChaCha8Rng>) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        if let Some(rng) = rng {
            order.shuffle(rng);
        }
        Self {
            order,
            size: size.max(1),
            pos: 0,
        }
    }
}

impl Iterator for Batches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.size).min(self.order.len());
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(out)
    }
}
