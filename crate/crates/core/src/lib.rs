//! MambaOutRS: a hierarchical gated-CNN backbone with learnable
//! frequency-domain gating, built on a small self-contained tensor library
//! with reverse-mode autodiff and an arbitrary-length FFT.

pub mod autodiff;
pub mod blocks;
pub mod checkpoint;
pub mod data;
pub mod dtype;
pub mod error;
pub mod gradcheck;
pub mod gradsuite;
pub mod init;
pub mod metrics;
pub mod model;
pub mod mors1;
pub mod ops;
pub mod optim;
pub mod param;
pub mod spectral;
pub mod tensor;
pub mod training;

pub use autodiff::{Gradients, Tape, Var};
pub use dtype::{DType, Scalar};
pub use error::{Error, Result};
pub use model::{Model, ModelConfig, VariantSpec};
pub use tensor::Tensor;
