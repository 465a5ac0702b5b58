//! Dataset manifests, the synthetic spectral dataset, augmentation and
//! batch assembly.

mod augment;
mod loader;
mod manifest;
mod synth;

pub use augment::{augment, cutmix_with, hflip, mixup_with, random_crop, AugmentConfig, Rect};
pub use loader::{one_hot, Batches, SplitData};
pub use manifest::{scan_dataset, Manifest, Sample, Split, DEFAULT_RATIOS, IMAGE_EXT};
pub use synth::{canonical, spectral_peak_classify, synth_generate, Grating, SynthSpec};
