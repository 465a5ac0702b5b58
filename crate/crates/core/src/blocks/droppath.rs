use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::dtype::Scalar;
use crate::error::{Error, Result};
use crate::ops::scale_rows;

use super::BlockRng;

/// Per-sample factors for stochastic depth: `1/(1−p)` with probability
/// `1−p`, else 0. Draws exactly `batch` uniforms from `rng`.
pub fn droppath_factors<T: Scalar>(batch: usize, p: f64, rng: &mut BlockRng) -> Result<Vec<T>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("drop-path rate {p} must lie in [0, 1)")));
    }
    let keep = 1.0 - p;
    let scale = T::of(1.0 / keep);
    Ok((0..batch)
        .map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() })
        .collect())
}

/// Stochastic depth on a residual branch. Identity when `p == 0` or when not training.
pub fn droppath<T: Scalar>(tape: &Tape<T>, branch: Var, p: f64, training: bool, rng: &mut BlockRng) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("drop-path rate {p} must lie in [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok(branch);
    }
    let batch = tape.shape(branch)[0];
    let factors = droppath_factors::<T>(batch, p, rng)?;
    scale_rows(tape, branch, &factors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use crate::testutil::{rand_tensor, rng};

    #[test]
    fn zero_rate_and_eval_are_identity() {
        let mut r = rng(1);
        let x = rand_tensor(&mut r, &[4, 2, 2, 3]);
        for (p, training) in [(0.0, true), (0.0, false), (0.7, false)] {
            let tape = Tape::new();
            let v = tape.constant(x.clone());
            let y = droppath(&tape, v, p, training, &mut r).unwrap();
            assert_eq!(*tape.value(y), x);
        }
    }

    #[test]
    fn rate_one_rejected() {
        let tape = Tape::<f64>::new();
        let v = tape.constant(Tensor::ones([1, 1, 1, 1]));
        assert!(droppath(&tape, v, 1.0, true, &mut rng(0)).is_err());
    }

    #[test]
    fn expectation_is_preserved() {
        // Mean of 10^4 draws of a unit branch stays within 3σ of 1.
        let p = 0.3;
        let n = 10_000;
        let mut r = rng(77);
        let f: Vec<f64> = droppath_factors(n, p, &mut r).unwrap();
        let mean = f.iter().sum::<f64>() / n as f64;
        let var_one = (1.0 / (1.0 - p)).powi(2) * (1.0 - p) * p;
        let sigma = (var_one / n as f64).sqrt();
        assert!((mean - 1.0).abs() <= 3.0 * sigma, "mean {mean} sigma {sigma}");
    }
}
