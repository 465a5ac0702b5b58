//! Spectral machinery: arbitrary-length FFT, the real 2D transform and the
//! learnable Fourier filter gate.

pub mod fft;
mod gate;
mod real2d;

pub use fft::{fft1d, Direction, FftPlan};
pub use gate::{FourierFilterGate, GateSource};
pub use real2d::{irfft2, rfft2, HalfSpectrum, Real2dPlan};
