//! Seeded parameter initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dtype::Scalar;
use crate::tensor::Tensor;

/// Default standard deviation for weights; also the fixed one for gate logits.
pub const INIT_STD: f64 = 0.02;

/// Draws initial values from one seeded stream, in parameter creation order.
/// Samples are taken in `f64` and cast, so `f32` and `f64` builds from the
/// same seed agree up to rounding.
pub struct Initializer {
    rng: ChaCha8Rng,
    weight_std: f64,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self::with_weight_std(seed, INIT_STD)
    }

    pub fn with_weight_std(seed: u64, weight_std: f64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            weight_std,
        }
    }

    /// Truncated normal at the configured weight scale.
    pub fn weight<T: Scalar>(&mut self, shape: &[usize]) -> Tensor<T> {
        self.trunc_normal(shape, self.weight_std)
    }

    /// Normal(0, std²) truncated to ±2·std by resampling.
    pub fn trunc_normal<T: Scalar>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        Tensor::from_fn(shape.to_vec(), |_| loop {
            let z: f64 = self.rng.sample(StandardNormal);
            if z.abs() <= 2.0 {
                break T::of(z * std);
            }
        })
    }

    pub fn normal<T: Scalar>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        Tensor::from_fn(shape.to_vec(), |_| {
            let z: f64 = self.rng.sample(StandardNormal);
            T::of(z * std)
        })
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_and_determinism() {
        let a: Tensor<f64> = Initializer::new(3).trunc_normal(&[1000], 0.02);
        let b: Tensor<f64> = Initializer::new(3).trunc_normal(&[1000], 0.02);
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| v.abs() <= 0.04));
        let mean = a.sum() / 1000.0;
        assert!(mean.abs() < 0.003);
    }
}
