use crate::autodiff::{Tape, Var};
use crate::dtype::Scalar;

use super::same_shape;

/// Exact GELU, `x·Φ(x)` with Φ the standard normal CDF.
#[inline]
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    half * x * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

#[inline]
fn gelu_grad<T: Scalar>(x: T) -> T {
    let cdf = T::of(0.5) * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * T::of(0.5)).exp() * T::of(0.398_942_280_401_432_7);
    cdf + x * pdf
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn gelu<T: Scalar>(tape: &Tape<T>, x: Var) -> Var {
    let xv = tape.value(x);
    let out = xv.map(gelu_scalar);
    tape.record(
        out,
        &[x],
        Box::new(move |g, _| {
            let d = g
                .data()
                .iter()
                .zip(xv.data())
                .map(|(&g, &x)| g * gelu_grad(x))
                .collect();
            vec![Some(same_shape(g, d))]
        }),
    )
}

pub fn sigmoid<T: Scalar>(tape: &Tape<T>, x: Var) -> Var {
    let out = tape.value(x).map(sigmoid_scalar);
    let saved = out.clone();
    tape.record(
        out,
        &[x],
        Box::new(move |g, _| {
            let d = g
                .data()
                .iter()
                .zip(saved.data())
                .map(|(&g, &s)| g * s * (T::one() - s))
                .collect();
            vec![Some(same_shape(g, d))]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Maclaurin series of erf, summed until terms vanish; independent of libm.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        loop {
            n += 1.0;
            term *= -x * x / n;
            let t = term / (2.0 * n + 1.0);
            sum += t;
            if t.abs() < 1e-18 {
                break;
            }
        }
        sum * 2.0 / std::f64::consts::PI.sqrt()
    }

    #[test]
    fn symmetry_points() {
        assert_eq!(gelu_scalar(0.0f64), 0.0);
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
    }

    #[test]
    fn gelu_at_one_is_phi_of_one() {
        let phi1 = 0.5 * (1.0 + erf_series(std::f64::consts::FRAC_1_SQRT_2));
        assert!((gelu_scalar(1.0f64) - phi1).abs() < 1e-15);
        assert!((gelu_scalar(1.0f64) - 0.841345).abs() < 5e-7);
    }

    #[test]
    fn sigmoid_is_logistic_symmetric() {
        for i in -50..=50 {
            let x = i as f64 * 0.73;
            assert!((sigmoid_scalar(x) + sigmoid_scalar(-x) - 1.0).abs() < 1e-15);
        }
        assert!(sigmoid_scalar(-1000.0f64).is_finite());
        assert_eq!(sigmoid_scalar(1000.0f32), 1.0);
    }
}
