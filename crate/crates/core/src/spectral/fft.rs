//! Complex FFT of any length.
//!
//! Lengths whose prime factors are all in {2, 3, 5, 7} use a recursive
//! mixed-radix decimation-in-time Cooley–Tukey transform. Every other length
//! goes through Bluestein's chirp-z algorithm on a power-of-two convolution.
//! Transforms are unnormalized; callers apply their own scaling.

use std::f64::consts::PI;

use num_complex::Complex;

use crate::dtype::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

const RADICES: [usize; 4] = [4, 2, 3, 5];

/// Factor `n` into the supported radices, or `None` if some other prime divides it.
fn factorize(mut n: usize) -> Option<Vec<usize>> {
    let mut factors = Vec::new();
    for &r in RADICES.iter().chain(std::iter::once(&7)) {
        while n.is_multiple_of(r) && n > 1 {
            factors.push(r);
            n /= r;
        }
    }
    (n == 1).then_some(factors)
}

#[derive(Debug, Clone)]
enum Algorithm<T> {
    MixedRadix {
        factors: Vec<usize>,
        /// `exp(-2πi k / n)` for `k in 0..n`.
        twiddles: Vec<Complex<T>>,
    },
    Bluestein {
        inner: Box<FftPlan<T>>,
        /// `exp(-iπ k² / n)` for `k in 0..n`.
        chirp: Vec<Complex<T>>,
        /// Forward transform of the conjugate chirp filter, pre-scaled by `1/m`.
        filter_spectrum: Vec<Complex<T>>,
    },
}

/// A reusable plan for forward and inverse transforms of one length.
#[derive(Debug, Clone)]
pub struct FftPlan<T> {
    len: usize,
    algorithm: Algorithm<T>,
}

impl<T: Scalar> FftPlan<T> {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::dim("fft", "length must be >= 1"));
        }
        let algorithm = match factorize(len) {
            Some(factors) => Algorithm::MixedRadix {
                factors,
                twiddles: (0..len)
                    .map(|k| {
                        let a = -2.0 * PI * k as f64 / len as f64;
                        Complex::new(T::of(a.cos()), T::of(a.sin()))
                    })
                    .collect(),
            },
            None => Self::bluestein(len)?,
        };
        Ok(Self { len, algorithm })
    }

    fn bluestein(n: usize) -> Result<Algorithm<T>> {
        let m = (2 * n - 1).next_power_of_two();
        let inner = FftPlan::new(m)?;
        // k² mod 2n keeps the chirp argument small and exact.
        let chirp: Vec<Complex<T>> = (0..n)
            .map(|k| {
                let k2 = (k as u128 * k as u128 % (2 * n as u128)) as f64;
                let a = -PI * k2 / n as f64;
                Complex::new(T::of(a.cos()), T::of(a.sin()))
            })
            .collect();
        let mut filter = vec![Complex::new(T::zero(), T::zero()); m];
        filter[0] = chirp[0].conj();
        for k in 1..n {
            filter[k] = chirp[k].conj();
            filter[m - k] = chirp[k].conj();
        }
        inner.process(&mut filter, Direction::Forward);
        let scale = T::one() / T::of(m as f64);
        for v in &mut filter {
            *v *= scale;
        }
        Ok(Algorithm::Bluestein {
            inner: Box::new(inner),
            chirp,
            filter_spectrum: filter,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_bluestein(&self) -> bool {
        matches!(self.algorithm, Algorithm::Bluestein { .. })
    }

    /// Transform `data` in place. Panics if `data.len() != self.len()`.
    pub fn process(&self, data: &mut [Complex<T>], direction: Direction) {
        assert_eq!(data.len(), self.len, "fft buffer length");
        if self.len == 1 {
            return;
        }
        // Inverse via conjugation: ifft(x) = conj(fft(conj(x))).
        if direction == Direction::Inverse {
            data.iter_mut().for_each(|v| *v = v.conj());
        }
        match &self.algorithm {
            Algorithm::MixedRadix { factors, twiddles } => {
                let input = data.to_vec();
                mixed_radix(&input, 1, data, factors, twiddles, 1);
            }
            Algorithm::Bluestein {
                inner,
                chirp,
                filter_spectrum,
            } => {
                let m = inner.len();
                let mut buf = vec![Complex::new(T::zero(), T::zero()); m];
                for (b, (x, c)) in buf.iter_mut().zip(data.iter().zip(chirp)) {
                    *b = x * c;
                }
                inner.process(&mut buf, Direction::Forward);
                for (b, f) in buf.iter_mut().zip(filter_spectrum) {
                    *b *= f;
                }
                // Inverse of the inner transform by conjugation; the 1/m is in the filter.
                buf.iter_mut().for_each(|v| *v = v.conj());
                inner.process(&mut buf, Direction::Forward);
                for (x, (b, c)) in data.iter_mut().zip(buf.iter().zip(chirp)) {
                    *x = b.conj() * c;
                }
            }
        }
        if direction == Direction::Inverse {
            data.iter_mut().for_each(|v| *v = v.conj());
        }
    }
}

/// Decimation in time: split `input` (strided) into `p` interleaved
/// subsequences, transform each, then combine with a radix-`p` butterfly.
fn mixed_radix<T: Scalar>(
    input: &[Complex<T>],
    stride: usize,
    out: &mut [Complex<T>],
    factors: &[usize],
    twiddles: &[Complex<T>],
    tw_step: usize,
) {
    let n = out.len();
    if n == 1 {
        out[0] = input[0];
        return;
    }
    let p = factors[0];
    let m = n / p;
    for j in 0..p {
        mixed_radix(
            &input[j * stride..],
            stride * p,
            &mut out[j * m..(j + 1) * m],
            &factors[1..],
            twiddles,
            tw_step * p,
        );
    }
    let full = twiddles.len();
    let mut scratch = [Complex::new(T::zero(), T::zero()); 7];
    let mut result = [Complex::new(T::zero(), T::zero()); 7];
    for k in 0..m {
        // Twiddle the sub-transform outputs.
        for j in 0..p {
            scratch[j] = out[j * m + k] * twiddles[(j * k * tw_step) % full];
        }
        // Length-p DFT with roots exp(-2πi q j / p) = twiddles[q j (full/p)].
        let root_step = full / p;
        for q in 0..p {
            let mut acc = scratch[0];
            for j in 1..p {
                acc += scratch[j] * twiddles[((q * j) % p) * root_step];
            }
            result[q] = acc;
        }
        for q in 0..p {
            out[k + q * m] = result[q];
        }
    }
}

/// One-shot transform of `data`.
pub fn fft1d<T: Scalar>(data: &[Complex<T>], direction: Direction) -> Result<Vec<Complex<T>>> {
    let plan = FftPlan::new(data.len())?;
    let mut out = data.to_vec();
    plan.process(&mut out, direction);
    Ok(out)
}
