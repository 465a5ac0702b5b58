//! Orthonormal 2D FFT of real planes in the half-spectrum layout.

use num_complex::Complex;
use rayon::prelude::*;

use crate::dtype::Scalar;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::fft::{Direction, FftPlan};

/// Non-redundant half of the 2D spectrum of a real `[B,H,W,C]` tensor,
/// stored as `[B, C, H, W/2+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpectrum<T> {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    /// Width of the real signal; the stored width is `original_width / 2 + 1`.
    pub original_width: usize,
    pub data: Vec<Complex<T>>,
}

impl<T: Scalar> HalfSpectrum<T> {
    pub fn freq_width(&self) -> usize {
        self.original_width / 2 + 1
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.freq_width()
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, h: usize, k: usize) -> usize {
        ((b * self.channels + c) * self.height + h) * self.freq_width() + k
    }

    pub fn at(&self, b: usize, c: usize, h: usize, k: usize) -> Complex<T> {
        self.data[self.index(b, c, h, k)]
    }

    pub fn plane(&self, b: usize, c: usize) -> &[Complex<T>] {
        let n = self.plane_len();
        let start = (b * self.channels + c) * n;
        &self.data[start..start + n]
    }
}

/// Plans for one `(H, W)` resolution.
#[derive(Debug, Clone)]
pub struct Real2dPlan<T> {
    height: usize,
    width: usize,
    rows: FftPlan<T>,
    cols: FftPlan<T>,
    scale: T,
}

impl<T: Scalar> Real2dPlan<T> {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        Ok(Self {
            height,
            width,
            rows: FftPlan::new(width)?,
            cols: FftPlan::new(height)?,
            scale: T::one() / T::of((height * width) as f64).sqrt(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn freq_width(&self) -> usize {
        self.width / 2 + 1
    }

    /// Forward transform of one real plane (`H·W`, row-major) into `H·Wf` bins.
    pub fn forward_plane(&self, plane: &[T], out: &mut [Complex<T>]) {
        let (h, w, wf) = (self.height, self.width, self.freq_width());
        let zero = Complex::new(T::zero(), T::zero());
        let mut row = vec![zero; w];
        for y in 0..h {
            for (r, &v) in row.iter_mut().zip(&plane[y * w..(y + 1) * w]) {
                *r = Complex::new(v, T::zero());
            }
            self.rows.process(&mut row, Direction::Forward);
            out[y * wf..(y + 1) * wf].copy_from_slice(&row[..wf]);
        }
        let mut col = vec![zero; h];
        for k in 0..wf {
            for y in 0..h {
                col[y] = out[y * wf + k];
            }
            self.cols.process(&mut col, Direction::Forward);
            for y in 0..h {
                out[y * wf + k] = col[y] * self.scale;
            }
        }
    }

    /// Inverse transform of `H·Wf` bins into a real plane.
    ///
    /// The dropped columns are filled by conjugate symmetry. Only the real part
    /// of the DC column (and of the Nyquist column when `W` is even) enters
    /// each row, which is what a real output requires.
    pub fn inverse_plane(&self, spec: &[Complex<T>], out: &mut [T]) {
        let (h, w, wf) = (self.height, self.width, self.freq_width());
        let zero = Complex::new(T::zero(), T::zero());
        let mut cols = spec.to_vec();
        let mut col = vec![zero; h];
        for k in 0..wf {
            for y in 0..h {
                col[y] = cols[y * wf + k];
            }
            self.cols.process(&mut col, Direction::Inverse);
            for y in 0..h {
                cols[y * wf + k] = col[y];
            }
        }
        let mut row = vec![zero; w];
        for y in 0..h {
            let half = &cols[y * wf..(y + 1) * wf];
            row[0] = Complex::new(half[0].re, T::zero());
            row[1..wf].copy_from_slice(&half[1..wf]);
            if w % 2 == 0 && w > 1 {
                row[w / 2] = Complex::new(half[w / 2].re, T::zero());
            }
            for k in 1..w.div_ceil(2) {
                row[w - k] = half[k].conj();
            }
            self.rows.process(&mut row, Direction::Inverse);
            for (o, v) in out[y * w..(y + 1) * w].iter_mut().zip(&row) {
                *o = v.re * self.scale;
            }
        }
    }

    /// Forward transform of every `(b, c)` plane of a `[B,H,W,C]` tensor.
    pub fn forward(&self, x: &Tensor<T>) -> Result<HalfSpectrum<T>> {
        let (b, h, w, c) = x.dims4("rfft2")?;
        if (h, w) != (self.height, self.width) {
            return Err(Error::dim(
                "rfft2",
                format!("plan is {}x{}, input {:?}", self.height, self.width, x.shape()),
            ));
        }
        let wf = self.freq_width();
        let plane_len = h * wf;
        let mut data = vec![Complex::new(T::zero(), T::zero()); b * c * plane_len];
        data.par_chunks_mut(plane_len).enumerate().for_each_init(
            || vec![T::zero(); h * w],
            |plane, (idx, out)| {
                let (bi, ci) = (idx / c, idx % c);
                let base = bi * h * w * c;
                for (p, v) in plane.iter_mut().enumerate() {
                    *v = x.data()[base + p * c + ci];
                }
                self.forward_plane(plane, out);
            },
        );
        Ok(HalfSpectrum {
            batch: b,
            channels: c,
            height: h,
            original_width: w,
            data,
        })
    }

    /// Inverse transform back to a `[B,H,W,C]` tensor.
    pub fn inverse(&self, spec: &HalfSpectrum<T>) -> Result<Tensor<T>> {
        if spec.height != self.height
            || spec.original_width != self.width
            || spec.data.len() != spec.batch * spec.channels * spec.plane_len()
        {
            return Err(Error::dim(
                "irfft2",
                format!(
                    "spectrum [{}, {}, {}, {}] (W={}) vs requested {}x{}",
                    spec.batch,
                    spec.channels,
                    spec.height,
                    spec.freq_width(),
                    spec.original_width,
                    self.height,
                    self.width
                ),
            ));
        }
        let (b, c, h, w) = (spec.batch, spec.channels, self.height, self.width);
        let planes: Vec<Vec<T>> = (0..b * c)
            .into_par_iter()
            .map(|idx| {
                let mut plane = vec![T::zero(); h * w];
                self.inverse_plane(spec.plane(idx / c, idx % c), &mut plane);
                plane
            })
            .collect();
        let mut out = vec![T::zero(); b * h * w * c];
        for (idx, plane) in planes.iter().enumerate() {
            let (bi, ci) = (idx / c, idx % c);
            let base = bi * h * w * c;
            for (p, &v) in plane.iter().enumerate() {
                out[base + p * c + ci] = v;
            }
        }
        Tensor::from_vec(vec![b, h, w, c], out)
    }
}

/// Orthonormal real 2D FFT over `(H, W)` of a `[B,H,W,C]` tensor.
pub fn rfft2<T: Scalar>(x: &Tensor<T>) -> Result<HalfSpectrum<T>> {
    let (_, h, w, _) = x.dims4("rfft2")?;
    Real2dPlan::new(h, w)?.forward(x)
}

/// Inverse of [`rfft2`]; `(out_h, out_w)` must match the spectrum.
pub fn irfft2<T: Scalar>(spec: &HalfSpectrum<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if out_h != spec.height || out_w != spec.original_width {
        return Err(Error::dim(
            "irfft2",
            format!(
                "output {out_h}x{out_w} inconsistent with spectrum {}x{} (W={})",
                spec.height,
                spec.freq_width(),
                spec.original_width
            ),
        ));
    }
    Real2dPlan::new(out_h, out_w)?.inverse(spec)
}
