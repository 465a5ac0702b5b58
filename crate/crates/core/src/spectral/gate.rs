//! Fourier filter gate: `y = irfft2(rfft2(x) ⊙ sigmoid(w))`.
//!
//! The gate is a real mask over the half spectrum. For a real mask the whole
//! map `x -> y` is a real symmetric linear operator, so its adjoint is itself:
//! the input gradient is the same filter applied to the output gradient. The
//! mask gradient uses the adjoint of the inverse transform, which is the
//! forward transform weighted by 2 on interior columns and 1 on the DC and
//! (even-width) Nyquist columns.

use num_complex::Complex;

use crate::autodiff::{Tape, Var};
use crate::dtype::Scalar;
use crate::error::{Error, Result};
use crate::ops::sigmoid_scalar;
use crate::tensor::Tensor;

use super::real2d::{HalfSpectrum, Real2dPlan};

/// Where the spectral mask comes from.
#[derive(Clone, Copy)]
pub enum GateSource<'a, T> {
    /// Learnable logits `w` of shape `[1, C, H, W/2+1]`; the mask is `sigmoid(w)`.
    Logits(Var),
    /// An explicit mask used as-is. Test hook; never used in training.
    Override(&'a Tensor<T>),
}

/// A gate bound to one `(C, H, W)` resolution.
#[derive(Debug, Clone)]
pub struct FourierFilterGate<T> {
    channels: usize,
    plan: Real2dPlan<T>,
}

impl<T: Scalar> FourierFilterGate<T> {
    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self> {
        Ok(Self {
            channels,
            plan: Real2dPlan::new(height, width)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.plan.height(), self.plan.width())
    }

    /// Shape of the gate logits: `[1, C, H, W/2+1]`.
    pub fn mask_shape(&self) -> [usize; 4] {
        [1, self.channels, self.plan.height(), self.plan.freq_width()]
    }

    pub fn num_logits(&self) -> usize {
        self.mask_shape().iter().product()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let (h, w) = self.resolution();
        match *shape {
            [_, xh, xw, xc] if (xh, xw, xc) == (h, w, self.channels) => Ok(()),
            _ => Err(Error::Config(format!(
                "Fourier filter gate is bound to {h}x{w} with {} channels; got input {shape:?}",
                self.channels
            ))),
        }
    }

    fn apply_mask(&self, spec: &mut HalfSpectrum<T>, mask: &[T]) {
        let plane = spec.plane_len();
        for chunk in spec.data.chunks_mut(plane * spec.channels) {
            for (v, &m) in chunk.iter_mut().zip(mask) {
                *v *= m;
            }
        }
    }

    /// Run the gate on `x` (`[B, H, W, C]`), recording it on the tape.
    pub fn forward(&self, tape: &Tape<T>, x: Var, source: GateSource<'_, T>) -> Result<Var> {
        let xv = tape.value(x);
        self.check_input(xv.shape())?;
        let (mask, logits) = match source {
            GateSource::Logits(w) => {
                let wv = tape.value(w);
                if wv.shape() != self.mask_shape() {
                    return Err(Error::Config(format!(
                        "gate logits {:?} do not match bound mask shape {:?}",
                        wv.shape(),
                        self.mask_shape()
                    )));
                }
                (wv.map(sigmoid_scalar), Some(w))
            }
            GateSource::Override(m) => {
                if m.shape() != self.mask_shape() {
                    return Err(Error::Config(format!(
                        "override mask {:?} does not match bound mask shape {:?}",
                        m.shape(),
                        self.mask_shape()
                    )));
                }
                (m.clone(), None)
            }
        };

        let spectrum = self.plan.forward(&xv)?;
        let mut gated = spectrum.clone();
        self.apply_mask(&mut gated, mask.data());
        let out = self.plan.inverse(&gated)?;

        let inputs: Vec<Var> = std::iter::once(x).chain(logits).collect();
        let this = self.clone();
        Ok(tape.record(
            out,
            &inputs,
            Box::new(move |g, needs| {
                let gspec = this.plan.forward(g).expect("gradient matches forward shape");
                let dx = needs[0].then(|| {
                    let mut s = gspec.clone();
                    this.apply_mask(&mut s, mask.data());
                    this.plan.inverse(&s).expect("shape")
                });
                let mut grads = vec![dx];
                if needs.len() > 1 {
                    grads.push(needs[1].then(|| this.logit_grad(&gspec, &spectrum, &mask)));
                }
                grads
            }),
        ))
    }

    fn logit_grad(&self, grad_spec: &HalfSpectrum<T>, input_spec: &HalfSpectrum<T>, mask: &Tensor<T>) -> Tensor<T> {
        let wf = self.plan.freq_width();
        let w = self.plan.width();
        let plane = grad_spec.plane_len() * grad_spec.channels;
        let mut dmask = vec![T::zero(); plane];
        for (gb, xb) in grad_spec.data.chunks(plane).zip(input_spec.data.chunks(plane)) {
            for (i, (gv, xv)) in gb.iter().zip(xb).enumerate() {
                let k = i % wf;
                let edge = k == 0 || (w.is_multiple_of(2) && k == w / 2);
                let weight = if edge { T::one() } else { T::of(2.0) };
                let prod: Complex<T> = gv.conj() * xv;
                dmask[i] += weight * prod.re;
            }
        }
        let d = dmask
            .iter()
            .zip(mask.data())
            .map(|(&d, &s)| d * s * (T::one() - s))
            .collect();
        Tensor::from_vec(self.mask_shape().to_vec(), d).expect("shape")
    }
}
