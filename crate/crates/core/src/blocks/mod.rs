//! Composite blocks: gated CNN block, Fourier gate block, stem, downsample
//! and classification head.

mod droppath;
mod fourier;
mod gated_cnn;
mod layers;
mod stem;

pub use droppath::{droppath, droppath_factors};
pub use fourier::{FgbCfg, FourierGateBlock};
pub use gated_cnn::{GatedCnnBlock, GatedCnnBlockCfg};
pub use layers::{Conv, Dense, DepthwiseConv, Norm};
pub use stem::{Downsample, Head, Stem};

/// Random stream used for stochastic depth.
pub type BlockRng = rand_chacha::ChaCha8Rng;

/// Default epsilon of every channel layer norm.
pub const NORM_EPS: f64 = 1e-6;
