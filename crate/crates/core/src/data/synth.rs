//! Synthetic dataset whose classes differ only in spectral content.
//!
//! Every image of class `k` is a sum of that class's cosine gratings, each
//! with an independent uniform random phase per sample and channel, plus
//! Gaussian noise. Random phases make the class-mean image flat, so raw
//! pixels carry almost no linear class information while the power spectrum
//! identifies the class.

use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{assign_splits, check_ratios, Manifest, DEFAULT_RATIOS, IMAGE_EXT};
use crate::error::{Error, Result};
use crate::mors1;
use crate::spectral::rfft2;
use crate::tensor::Tensor;

/// A plane-wave component `cos(2π(fx·w + fy·h)/S + φ)`. Frequencies are in
/// cycles per image; the orientation is the direction of `(fx, fy)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grating {
    pub fx: i32,
    pub fy: i32,
}

/// `(fx, fy)` and `(−fx, −fy)` are the same real grating; pick the one with
/// `fy > 0`, or `fy == 0, fx > 0`.
pub fn canonical(g: Grating) -> Grating {
    if g.fy > 0 || (g.fy == 0 && g.fx > 0) {
        g
    } else {
        Grating { fx: -g.fx, fy: -g.fy }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub classes: usize,
    pub samples_per_class: usize,
    pub size: usize,
    pub channels: usize,
    pub noise: f64,
    /// Gratings per class when signatures are drawn automatically.
    pub components: usize,
    /// Largest |fx|, |fy| for drawn signatures; 0 means `max(2, size/16 − 1)`,
    /// which stays below the Nyquist limit of an `S/8` feature map.
    pub max_freq: i32,
    pub seed: u64,
    pub ratios: [f64; 3],
    /// Explicit per-class signatures; drawn from `seed` when absent.
    pub signatures: Option<Vec<Vec<Grating>>>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            samples_per_class: 32,
            size: 64,
            channels: 3,
            noise: 0.1,
            components: 2,
            max_freq: 0,
            seed: 0,
            ratios: DEFAULT_RATIOS,
            signatures: None,
        }
    }
}

impl SynthSpec {
    fn max_freq(&self) -> i32 {
        if self.max_freq > 0 {
            self.max_freq
        } else {
            ((self.size / 16).saturating_sub(1)).max(2) as i32
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 16 {
            return Err(Error::Config(format!("synthetic image size {} < 16", self.size)));
        }
        if self.classes == 0 || self.samples_per_class == 0 || self.channels == 0 || self.components == 0 {
            return Err(Error::Config(
                "classes, samples_per_class, channels and components must be >= 1".into(),
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise sigma {} must be >= 0", self.noise)));
        }
        if self.max_freq() as usize >= self.size / 2 {
            return Err(Error::Config(format!(
                "max_freq {} must stay below the Nyquist index {}",
                self.max_freq(),
                self.size / 2
            )));
        }
        check_ratios(self.ratios)
    }

    /// The per-class signatures that will be rendered, canonicalized and
    /// sorted. Duplicate signatures are an error.
    pub fn resolved_signatures(&self) -> Result<Vec<Vec<Grating>>> {
        self.validate()?;
        let raw = match &self.signatures {
            Some(s) => {
                if s.len() != self.classes {
                    return Err(Error::Config(format!(
                        "{} signatures for {} classes",
                        s.len(),
                        self.classes
                    )));
                }
                s.clone()
            }
            None => self.draw_signatures()?,
        };
        let nyq = (self.size / 2) as i32;
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(raw.len());
        for (k, sig) in raw.into_iter().enumerate() {
            let set: BTreeSet<Grating> = sig.iter().copied().map(canonical).collect();
            if set.is_empty() || set.len() != sig.len() {
                return Err(Error::Config(format!(
                    "class {k} signature is empty or repeats a grating"
                )));
            }
            if let Some(g) = set
                .iter()
                .find(|g| (g.fx == 0 && g.fy == 0) || g.fx.abs() >= nyq || g.fy.abs() >= nyq)
            {
                return Err(Error::Config(format!(
                    "class {k} grating ({}, {}) is DC or at/above Nyquist",
                    g.fx, g.fy
                )));
            }
            let sorted: Vec<Grating> = set.into_iter().collect();
            if !seen.insert(sorted.clone()) {
                return Err(Error::Config(format!("class {k} duplicates another class signature")));
            }
            out.push(sorted);
        }
        Ok(out)
    }

    fn draw_signatures(&self) -> Result<Vec<Vec<Grating>>> {
        let f = self.max_freq();
        let mut pool: Vec<Grating> = (0..=f)
            .flat_map(|fy| (-f..=f).map(move |fx| Grating { fx, fy }))
            .filter(|&g| g != Grating { fx: 0, fy: 0 } && canonical(g) == g)
            .collect();
        let need = self.classes * self.components;
        if pool.len() < need {
            return Err(Error::Config(format!(
                "{need} distinct gratings requested but only {} exist below max_freq {f}",
                pool.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5157_4e41_5455_5245);
        pool.shuffle(&mut rng);
        Ok(pool[..need].chunks(self.components).map(<[Grating]>::to_vec).collect())
    }
}

fn render(sig: &[Grating], size: usize, channels: usize, noise: f64, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let phases: Vec<f64> = (0..sig.len() * channels).map(|_| rng.random::<f64>() * TAU).collect();
    let amp = 0.5 / sig.len() as f64;
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let s = size as f64;
    let mut data = Vec::with_capacity(size * size * channels);
    for h in 0..size {
        for w in 0..size {
            for c in 0..channels {
                let mut v = 0.5;
                for (j, g) in sig.iter().enumerate() {
                    let arg = TAU * (g.fx as f64 * w as f64 + g.fy as f64 * h as f64) / s;
                    v += amp * (arg + phases[j * channels + c]).cos();
                }
                if noise > 0.0 {
                    v += normal.sample(rng);
                }
                data.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    Tensor::from_vec([size, size, channels], data).expect("shape matches data")
}

/// Render the dataset under `root` as `class_XX/NNNNN.mors` plus
/// `manifest.json`, and return the manifest.
pub fn synth_generate(spec: &SynthSpec, root: impl AsRef<Path>) -> Result<Manifest> {
    let root = root.as_ref();
    let sigs = spec.resolved_signatures()?;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut classes = Vec::with_capacity(spec.classes);
    let mut per_class = Vec::with_capacity(spec.classes);
    for (k, sig) in sigs.iter().enumerate() {
        let name = format!("class_{k:02}");
        let dir = root.join(&name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut files = Vec::with_capacity(spec.samples_per_class);
        for i in 0..spec.samples_per_class {
            let img = render(sig, spec.size, spec.channels, spec.noise, &mut rng);
            let rel = PathBuf::from(&name).join(format!("{i:05}.{IMAGE_EXT}"));
            mors1::write_file(root.join(&rel), &img)?;
            files.push(rel);
        }
        classes.push(name);
        per_class.push(files);
    }
    let manifest = Manifest {
        classes,
        samples: assign_splits(per_class, spec.ratios, spec.seed),
        seed: spec.seed,
        ratios: spec.ratios,
        root: root.to_path_buf(),
    };
    manifest.save(root.join("manifest.json"))?;
    let sig_path = root.join("signatures.json");
    std::fs::write(&sig_path, serde_json::to_string_pretty(&sigs)? + "\n").map_err(|e| Error::io(&sig_path, e))?;
    Ok(manifest)
}

/// Power of the channel-averaged image at a grating's half-spectrum bin.
fn grating_power(spec: &crate::spectral::HalfSpectrum<f64>, g: Grating) -> f64 {
    let h = spec.height as i32;
    let (fx, fy) = if g.fx < 0 { (-g.fx, -g.fy) } else { (g.fx, g.fy) };
    spec.at(0, 0, fy.rem_euclid(h) as usize, fx as usize).norm_sqr()
}

/// Classify an `[H, W, C]` image by which signature carries the most
/// spectral energy.
pub fn spectral_peak_classify(image: &Tensor<f32>, signatures: &[Vec<Grating>]) -> Result<usize> {
    let (h, w, c) = match image.shape() {
        &[h, w, c] => (h, w, c),
        s => {
            return Err(Error::dim(
                "spectral_peak_classify",
                format!("expected [H,W,C], got {s:?}"),
            ))
        }
    };
    let mean: Vec<f64> = image
        .data()
        .chunks_exact(c)
        .map(|px| px.iter().map(|&v| v as f64).sum::<f64>() / c as f64)
        .collect();
    let spec = rfft2(&Tensor::from_vec([1, h, w, 1], mean)?)?;
    let scores: Vec<f64> = signatures
        .iter()
        .map(|sig| sig.iter().map(|&g| grating_power(&spec, g)).sum())
        .collect();
    Ok(crate::metrics::argmax_rows(&scores, scores.len())[0])
}
