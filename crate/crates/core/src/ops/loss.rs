use crate::autodiff::{Tape, Var};
use crate::dtype::Scalar;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Check that every row of `targets` is a probability vector.
pub fn validate_targets<T: Scalar>(targets: &Tensor<T>) -> Result<()> {
    let k = targets.last_dim();
    let tol = if T::DTYPE == crate::dtype::DType::F32 {
        1e-5
    } else {
        1e-9
    };
    for (r, row) in targets.data().chunks(k).enumerate() {
        let s: f64 = row.iter().map(|v| v.f64()).sum();
        if (s - 1.0).abs() > tol * k as f64 || row.iter().any(|&v| v < T::zero()) {
            return Err(Error::Validation(format!(
                "target row {r} is not a probability vector (sum {s})"
            )));
        }
    }
    Ok(())
}

/// Mean over the batch of `-Σ_k t_k · log softmax(z)_k`.
///
/// `logits` and `targets` share a shape whose trailing axis is the class axis.
pub fn softmax_cross_entropy<T: Scalar>(tape: &Tape<T>, logits: Var, targets: &Tensor<T>) -> Result<Var> {
    let zv = tape.value(logits);
    if zv.shape() != targets.shape() {
        return Err(Error::dim(
            "softmax_cross_entropy",
            format!("logits {:?} vs targets {:?}", zv.shape(), targets.shape()),
        ));
    }
    validate_targets(targets)?;
    let k = zv.last_dim();
    let rows = zv.rows();
    let mut probs = vec![T::zero(); zv.len()];
    let mut total = T::zero();
    for r in 0..rows {
        let z = &zv.data()[r * k..(r + 1) * k];
        let t = &targets.data()[r * k..(r + 1) * k];
        let m = z.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let se = z.iter().fold(T::zero(), |s, &v| s + (v - m).exp());
        let lse = m + se.ln();
        for j in 0..k {
            probs[r * k + j] = (z[j] - lse).exp();
            if t[j] != T::zero() {
                total -= t[j] * (z[j] - lse);
            }
        }
    }
    let inv_rows = T::one() / T::of(rows as f64);
    let out = Tensor::scalar(total * inv_rows);
    let targets = targets.clone();
    let shape = zv.shape().to_vec();
    Ok(tape.record(
        out,
        &[logits],
        Box::new(move |g, _| {
            let scale = g.data()[0] * inv_rows;
            let d = probs
                .iter()
                .zip(targets.data().chunks(k).flat_map(|row| {
                    let s = row.iter().fold(T::zero(), |a, &b| a + b);
                    row.iter().map(move |&t| (t, s))
                }))
                .map(|(&p, (t, s))| (p * s - t) * scale)
                .collect();
            vec![Some(Tensor::from_vec(shape, d).expect("shape"))]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{rand_tensor, rng};

    fn ce(z: Tensor<f64>, t: Tensor<f64>) -> Result<f64> {
        let tape = Tape::new();
        let l = softmax_cross_entropy(&tape, tape.constant(z), &t)?;
        Ok(tape.value(l).data()[0])
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let t = Tensor::from_vec([1, 4], vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let l = ce(Tensor::zeros([1, 4]), t).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-15);
        assert!((l - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let z = Tensor::from_vec([1, 2], vec![1000.0, 0.0]).unwrap();
        let t = Tensor::from_vec([1, 2], vec![1.0, 0.0]).unwrap();
        let l = ce(z, t).unwrap();
        assert!(l.is_finite() && l.abs() < 1e-12);
        let z32 = Tensor::<f32>::from_vec([1, 2], vec![1000.0, 0.0]).unwrap();
        let tape = Tape::new();
        let l = softmax_cross_entropy(
            &tape,
            tape.constant(z32),
            &Tensor::from_vec([1, 2], vec![1.0f32, 0.0]).unwrap(),
        )
        .unwrap();
        assert!(tape.value(l).data()[0].is_finite());
    }

    #[test]
    fn non_normalized_targets_rejected() {
        let t = Tensor::from_vec([1, 2], vec![0.7, 0.7]).unwrap();
        assert!(matches!(ce(Tensor::zeros([1, 2]), t), Err(Error::Validation(_))));
    }

    #[test]
    fn matches_naive_softmax() {
        let mut r = rng(21);
        let z = rand_tensor(&mut r, &[5, 6]);
        let raw = rand_tensor(&mut r, &[5, 6]).map(|v| v.abs() + 0.1);
        let mut t = raw.clone();
        for row in t.data_mut().chunks_mut(6) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        let got = ce(z.clone(), t.clone()).unwrap();
        let mut want = 0.0;
        for (zr, tr) in z.data().chunks(6).zip(t.data().chunks(6)) {
            let denom: f64 = zr.iter().map(|v| v.exp()).sum();
            for (zv, tv) in zr.iter().zip(tr) {
                want -= tv * (zv.exp() / denom).ln();
            }
        }
        want /= 5.0;
        assert!((got - want).abs() < 1e-8);
    }
}
