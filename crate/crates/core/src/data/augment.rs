//! Batch augmentation: horizontal flip, pad-and-crop, Mixup and CutMix.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::dtype::Scalar;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Per-sample flip probability.
    pub hflip: f64,
    /// Zero padding before the random crop; 0 disables cropping.
    pub crop_pad: usize,
    /// Beta(α, α) parameter; 0 disables.
    pub mixup_alpha: f64,
    pub cutmix_alpha: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hflip: 0.0,
            crop_pad: 0,
            mixup_alpha: 0.0,
            cutmix_alpha: 0.0,
        }
    }
}

impl AugmentConfig {
    pub fn is_identity(&self) -> bool {
        self.hflip == 0.0 && self.crop_pad == 0 && self.mixup_alpha == 0.0 && self.cutmix_alpha == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.hflip) {
            return Err(Error::Config(format!("hflip probability {} outside [0,1]", self.hflip)));
        }
        for (name, a) in [("mixup_alpha", self.mixup_alpha), ("cutmix_alpha", self.cutmix_alpha)] {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::Config(format!("{name} {a} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Rows `[y0, y1)` and columns `[x0, x1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        (self.y1 - self.y0) * (self.x1 - self.x0)
    }
}

fn sample_len<T: Scalar>(images: &Tensor<T>) -> usize {
    images.shape()[1..].iter().product()
}

/// Mirror sample `b` of `[B, H, W, C]` along the width axis.
pub fn hflip<T: Scalar>(images: &mut Tensor<T>, b: usize) {
    let (w, c) = (images.shape()[2], images.shape()[3]);
    let n = sample_len(images);
    let img = &mut images.data_mut()[b * n..(b + 1) * n];
    for row in img.chunks_exact_mut(w * c) {
        for x in 0..w / 2 {
            for ch in 0..c {
                row.swap(x * c + ch, (w - 1 - x) * c + ch);
            }
        }
    }
}

/// Pad sample `b` with `pad` zeros on every side, then crop the original
/// size at offset `(dy, dx)` in the padded frame.
pub fn random_crop<T: Scalar>(images: &mut Tensor<T>, b: usize, pad: usize, dy: usize, dx: usize) {
    let (h, w, c) = (images.shape()[1], images.shape()[2], images.shape()[3]);
    let n = sample_len(images);
    let img = &mut images.data_mut()[b * n..(b + 1) * n];
    let src = img.to_vec();
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = ((y + dy) as isize - pad as isize, (x + dx) as isize - pad as isize);
            let inside = sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w;
            for ch in 0..c {
                img[(y * w + x) * c + ch] = if inside {
                    src[(sy as usize * w + sx as usize) * c + ch]
                } else {
                    T::zero()
                };
            }
        }
    }
}

/// `t[b] ← λ·t[b] + (1−λ)·t[perm[b]]` along the leading axis.
fn blend_rows<T: Scalar>(t: &mut Tensor<T>, perm: &[usize], lambda: f64) {
    let (lam, rest) = (T::of(lambda), T::of(1.0 - lambda));
    let n = sample_len(t);
    let src = t.data().to_vec();
    for (b, &p) in perm.iter().enumerate() {
        let dst = &mut t.data_mut()[b * n..(b + 1) * n];
        for (i, d) in dst.iter_mut().enumerate() {
            *d = lam * src[b * n + i] + rest * src[p * n + i];
        }
    }
}

/// `x ← λx + (1−λ)x[perm]`, labels likewise.
pub fn mixup_with<T: Scalar>(images: &mut Tensor<T>, labels: &mut Tensor<T>, perm: &[usize], lambda: f64) {
    blend_rows(images, perm, lambda);
    blend_rows(labels, perm, lambda);
}

/// Paste `rect` from `x[perm]` into each sample and weight labels by the
/// exact pasted area. Returns the kept-area weight `1 − area/(H·W)`.
pub fn cutmix_with<T: Scalar>(images: &mut Tensor<T>, labels: &mut Tensor<T>, perm: &[usize], rect: Rect) -> f64 {
    let (h, w, c) = (images.shape()[1], images.shape()[2], images.shape()[3]);
    let n = h * w * c;
    let src = images.data().to_vec();
    for (b, &p) in perm.iter().enumerate() {
        for y in rect.y0..rect.y1 {
            let off = (y * w + rect.x0) * c;
            let len = (rect.x1 - rect.x0) * c;
            images.data_mut()[b * n + off..b * n + off + len].copy_from_slice(&src[p * n + off..p * n + off + len]);
        }
    }
    let kept = 1.0 - rect.area() as f64 / (h * w) as f64;
    blend_rows(labels, perm, kept);
    kept
}

/// CutMix box: side lengths `⌊S·√(1−λ)⌋`, centre uniform, clipped.
fn cutmix_rect(h: usize, w: usize, lambda: f64, rng: &mut ChaCha8Rng) -> Rect {
    let cut = (1.0 - lambda).sqrt();
    let (ch, cw) = ((h as f64 * cut) as usize, (w as f64 * cut) as usize);
    let (cy, cx) = (rng.random_range(0..h), rng.random_range(0..w));
    Rect {
        y0: cy.saturating_sub(ch / 2),
        y1: (cy + ch - ch / 2).min(h),
        x0: cx.saturating_sub(cw / 2),
        x1: (cx + cw - cw / 2).min(w),
    }
}

/// Augment `images [B,H,W,C]` and soft `labels [B,K]` in place. When both
/// Mixup and CutMix are enabled one of them is chosen per batch.
pub fn augment<T: Scalar>(
    images: &mut Tensor<T>,
    labels: &mut Tensor<T>,
    cfg: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    cfg.validate()?;
    let (b, h, w, _) = images.dims4("augment")?;
    if labels.rank() != 2 || labels.shape()[0] != b {
        return Err(Error::dim(
            "augment",
            format!("images {:?} vs labels {:?}", images.shape(), labels.shape()),
        ));
    }
    for i in 0..b {
        if cfg.hflip > 0.0 && rng.random::<f64>() < cfg.hflip {
            hflip(images, i);
        }
        if cfg.crop_pad > 0 {
            let dy = rng.random_range(0..=2 * cfg.crop_pad);
            let dx = rng.random_range(0..=2 * cfg.crop_pad);
            random_crop(images, i, cfg.crop_pad, dy, dx);
        }
    }
    let use_mixup = cfg.mixup_alpha > 0.0;
    let use_cutmix = cfg.cutmix_alpha > 0.0;
    if b < 2 || !(use_mixup || use_cutmix) {
        return Ok(());
    }
    let cutmix = use_cutmix && (!use_mixup || rng.random::<bool>());
    let alpha = if cutmix { cfg.cutmix_alpha } else { cfg.mixup_alpha };
    let lambda = Beta::new(alpha, alpha)
        .map_err(|e| Error::Config(format!("Beta({alpha}, {alpha}): {e}")))?
        .sample(rng);
    let mut perm: Vec<usize> = (0..b).collect();
    perm.shuffle(rng);
    if cutmix {
        let rect = cutmix_rect(h, w, lambda, rng);
        cutmix_with(images, labels, &perm, rect);
    } else {
        mixup_with(images, labels, &perm, lambda);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn batch() -> (Tensor<f64>, Tensor<f64>) {
        let x = Tensor::from_fn([4, 6, 5, 2], |i| (i as f64 * 0.37).sin());
        let y = Tensor::from_fn([4, 3], |i| {
            if i / 3 == i % 3 || (i / 3 == 3 && i % 3 == 0) {
                1.0
            } else {
                0.0
            }
        });
        (x, y)
    }

    #[test]
    fn disabled_is_identity() {
        let (mut x, mut y) = batch();
        let (x0, y0) = (x.clone(), y.clone());
        augment(
            &mut x,
            &mut y,
            &AugmentConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!((x, y), (x0, y0));
    }

    #[test]
    fn hflip_is_an_involution_and_mirrors() {
        let (mut x, _) = batch();
        let x0 = x.clone();
        hflip(&mut x, 1);
        assert_eq!(x.at4(1, 2, 0, 1), x0.at4(1, 2, 4, 1));
        assert_eq!(x.at4(0, 2, 0, 1), x0.at4(0, 2, 0, 1));
        hflip(&mut x, 1);
        assert_eq!(x, x0);
    }

    #[test]
    fn centred_crop_is_identity_and_shift_moves_pixels() {
        let (mut x, _) = batch();
        let x0 = x.clone();
        random_crop(&mut x, 0, 2, 2, 2);
        assert_eq!(x, x0);
        random_crop(&mut x, 0, 2, 3, 2);
        assert_eq!(x.at4(0, 0, 1, 0), x0.at4(0, 1, 1, 0));
        assert_eq!(x.at4(0, 5, 1, 0), 0.0);
    }

    #[test]
    fn mixup_labels_are_convex() {
        let mut x = Tensor::<f64>::zeros([2, 1, 1, 1]);
        let mut y = Tensor::from_vec([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        mixup_with(&mut x, &mut y, &[1, 0], 0.3);
        assert!((y.data()[0] - 0.3).abs() < 1e-15 && (y.data()[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn cutmix_label_equals_pasted_area() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let mut x = Tensor::<f64>::zeros([2, 8, 8, 1]);
            x.data_mut()[64..].fill(1.0);
            let mut y = Tensor::from_vec([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
            let lam = rng.random::<f64>();
            let rect = cutmix_rect(8, 8, lam, &mut rng);
            cutmix_with(&mut x, &mut y, &[1, 0], rect);
            let pasted = x.data()[..64].iter().filter(|&&v| v == 1.0).count();
            assert!((y.data()[1] - pasted as f64 / 64.0).abs() < 1e-15);
        }
    }

    #[test]
    fn labels_stay_on_the_simplex() {
        let cfg = AugmentConfig {
            hflip: 0.5,
            crop_pad: 2,
            mixup_alpha: 0.8,
            cutmix_alpha: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let (mut x, mut y) = batch();
            augment(&mut x, &mut y, &cfg, &mut rng).unwrap();
            for row in y.data().chunks(3) {
                assert!(row.iter().all(|&v| v >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
