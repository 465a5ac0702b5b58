//! Zero-padded "same" convolutions in channels-last layout.

use rayon::prelude::*;

use crate::autodiff::{Tape, Var};
use crate::dtype::Scalar;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Output spatial size for odd kernel `k`, padding `k/2` and stride `s`: `ceil(n/s)`.
pub fn conv_out_size(n: usize, k: usize, stride: usize) -> usize {
    (n + 2 * (k / 2) - k) / stride + 1
}

/// Depthwise 2D cross-correlation, stride 1, zero padding `k/2`.
///
/// `kernel` is `[k, k, C]`, `bias` is `[C]`.
pub fn dwconv2d<T: Scalar>(tape: &Tape<T>, x: Var, kernel: Var, bias: Var) -> Result<Var> {
    let xv = tape.value(x);
    let kv = tape.value(kernel);
    let bv = tape.value(bias);
    let (bn, h, w, c) = xv.dims4("dwconv2d")?;
    let k = match kv.shape() {
        &[k1, k2, kc] if k1 == k2 && kc == c => k1,
        s => {
            return Err(Error::dim(
                "dwconv2d",
                format!("kernel {s:?} vs input {:?}", xv.shape()),
            ))
        }
    };
    if k % 2 == 0 {
        return Err(Error::dim("dwconv2d", format!("kernel size {k} must be odd")));
    }
    if bv.shape() != [c] {
        return Err(Error::dim("dwconv2d", format!("bias {:?} vs {c} channels", bv.shape())));
    }
    let p = k / 2;
    let plane = h * w * c;
    let mut out = vec![T::zero(); bn * plane];
    let (kd, bd) = (kv.data(), bv.data());
    out.par_chunks_mut(plane)
        .zip(xv.data().par_chunks(plane))
        .for_each(|(o, xs)| {
            for oy in 0..h {
                for ox in 0..w {
                    let orow = &mut o[(oy * w + ox) * c..(oy * w + ox + 1) * c];
                    orow.copy_from_slice(bd);
                    for dy in 0..k {
                        let Some(iy) = (oy + dy).checked_sub(p).filter(|&v| v < h) else {
                            continue;
                        };
                        for dx in 0..k {
                            let Some(ix) = (ox + dx).checked_sub(p).filter(|&v| v < w) else {
                                continue;
                            };
                            let xr = &xs[(iy * w + ix) * c..(iy * w + ix + 1) * c];
                            let kr = &kd[(dy * k + dx) * c..(dy * k + dx + 1) * c];
                            for ((o, &a), &b) in orow.iter_mut().zip(xr).zip(kr) {
                                *o += a * b;
                            }
                        }
                    }
                }
            }
        });
    let out = Tensor::from_vec(xv.shape().to_vec(), out)?;

    Ok(tape.record(
        out,
        &[x, kernel, bias],
        Box::new(move |g, needs| {
            let gd = g.data();
            let dx = needs[0].then(|| {
                let mut dx = vec![T::zero(); bn * plane];
                let kd = kv.data();
                dx.par_chunks_mut(plane)
                    .zip(gd.par_chunks(plane))
                    .for_each(|(dxs, gs)| {
                        for oy in 0..h {
                            for ox in 0..w {
                                let gr = &gs[(oy * w + ox) * c..(oy * w + ox + 1) * c];
                                for dy in 0..k {
                                    let Some(iy) = (oy + dy).checked_sub(p).filter(|&v| v < h) else {
                                        continue;
                                    };
                                    for ddx in 0..k {
                                        let Some(ix) = (ox + ddx).checked_sub(p).filter(|&v| v < w) else {
                                            continue;
                                        };
                                        let kr = &kd[(dy * k + ddx) * c..(dy * k + ddx + 1) * c];
                                        let dr = &mut dxs[(iy * w + ix) * c..(iy * w + ix + 1) * c];
                                        for ((d, &a), &b) in dr.iter_mut().zip(gr).zip(kr) {
                                            *d += a * b;
                                        }
                                    }
                                }
                            }
                        }
                    });
                Tensor::from_vec(xv.shape().to_vec(), dx).expect("shape")
            });
            let dk = needs[1].then(|| {
                let mut dk = vec![T::zero(); k * k * c];
                for (xs, gs) in xv.data().chunks(plane).zip(gd.chunks(plane)) {
                    for oy in 0..h {
                        for ox in 0..w {
                            let gr = &gs[(oy * w + ox) * c..(oy * w + ox + 1) * c];
                            for dy in 0..k {
                                let Some(iy) = (oy + dy).checked_sub(p).filter(|&v| v < h) else {
                                    continue;
                                };
                                for ddx in 0..k {
                                    let Some(ix) = (ox + ddx).checked_sub(p).filter(|&v| v < w) else {
                                        continue;
                                    };
                                    let xr = &xs[(iy * w + ix) * c..(iy * w + ix + 1) * c];
                                    let kr = &mut dk[(dy * k + ddx) * c..(dy * k + ddx + 1) * c];
                                    for ((d, &a), &b) in kr.iter_mut().zip(gr).zip(xr) {
                                        *d += a * b;
                                    }
                                }
                            }
                        }
                    }
                }
                Tensor::from_vec(vec![k, k, c], dk).expect("shape")
            });
            let db = needs[2].then(|| channel_sums(gd, c));
            vec![dx, dk, db]
        }),
    ))
}

fn channel_sums<T: Scalar>(g: &[T], c: usize) -> Tensor<T> {
    let mut db = vec![T::zero(); c];
    for row in g.chunks(c) {
        for (d, &v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }
    Tensor::from_vec(vec![c], db).expect("shape")
}

/// Dense 2D cross-correlation with zero padding `k/2` and the given stride.
///
/// `weight` is `[k, k, Cin, Cout]`, `bias` is `[Cout]`.
pub fn conv2d<T: Scalar>(tape: &Tape<T>, x: Var, weight: Var, bias: Var, stride: usize) -> Result<Var> {
    let xv = tape.value(x);
    let wv = tape.value(weight);
    let bv = tape.value(bias);
    let (bn, h, w, cin) = xv.dims4("conv2d")?;
    let (k, cout) = match wv.shape() {
        &[k1, k2, wc, co] if k1 == k2 && wc == cin => (k1, co),
        s => return Err(Error::dim("conv2d", format!("weight {s:?} vs input {:?}", xv.shape()))),
    };
    if k % 2 == 0 {
        return Err(Error::dim("conv2d", format!("kernel size {k} must be odd")));
    }
    if stride == 0 {
        return Err(Error::dim("conv2d", "stride must be >= 1"));
    }
    if bv.shape() != [cout] {
        return Err(Error::dim("conv2d", format!("bias {:?} vs {cout} outputs", bv.shape())));
    }
    let p = k / 2;
    let ho = conv_out_size(h, k, stride);
    let wo = conv_out_size(w, k, stride);
    let in_plane = h * w * cin;
    let out_plane = ho * wo * cout;
    // Input coordinate for output `o` and tap `d`, if inside the image.
    let src = move |o: usize, d: usize, n: usize| (o * stride + d).checked_sub(p).filter(|&v| v < n);

    let mut out = vec![T::zero(); bn * out_plane];
    let (wd, bd) = (wv.data(), bv.data());
    out.par_chunks_mut(out_plane)
        .zip(xv.data().par_chunks(in_plane))
        .for_each(|(o, xs)| {
            for oy in 0..ho {
                for ox in 0..wo {
                    let orow = &mut o[(oy * wo + ox) * cout..(oy * wo + ox + 1) * cout];
                    orow.copy_from_slice(bd);
                    for dy in 0..k {
                        let Some(iy) = src(oy, dy, h) else { continue };
                        for dx in 0..k {
                            let Some(ix) = src(ox, dx, w) else { continue };
                            let xr = &xs[(iy * w + ix) * cin..(iy * w + ix + 1) * cin];
                            let tap = (dy * k + dx) * cin;
                            for (ci, &a) in xr.iter().enumerate() {
                                let wr = &wd[(tap + ci) * cout..(tap + ci + 1) * cout];
                                for (oj, &wj) in orow.iter_mut().zip(wr) {
                                    *oj += a * wj;
                                }
                            }
                        }
                    }
                }
            }
        });
    let out = Tensor::from_vec(vec![bn, ho, wo, cout], out)?;

    Ok(tape.record(
        out,
        &[x, weight, bias],
        Box::new(move |g, needs| {
            let gd = g.data();
            let dx = needs[0].then(|| {
                let mut dx = vec![T::zero(); bn * in_plane];
                let wd = wv.data();
                dx.par_chunks_mut(in_plane)
                    .zip(gd.par_chunks(out_plane))
                    .for_each(|(dxs, gs)| {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let gr = &gs[(oy * wo + ox) * cout..(oy * wo + ox + 1) * cout];
                                for dy in 0..k {
                                    let Some(iy) = src(oy, dy, h) else { continue };
                                    for ddx in 0..k {
                                        let Some(ix) = src(ox, ddx, w) else { continue };
                                        let tap = (dy * k + ddx) * cin;
                                        let dr = &mut dxs[(iy * w + ix) * cin..(iy * w + ix + 1) * cin];
                                        for (ci, d) in dr.iter_mut().enumerate() {
                                            let wr = &wd[(tap + ci) * cout..(tap + ci + 1) * cout];
                                            *d += gr.iter().zip(wr).fold(T::zero(), |s, (&a, &b)| s + a * b);
                                        }
                                    }
                                }
                            }
                        }
                    });
                Tensor::from_vec(xv.shape().to_vec(), dx).expect("shape")
            });
            let dw = needs[1].then(|| {
                let mut dw = vec![T::zero(); k * k * cin * cout];
                for (xs, gs) in xv.data().chunks(in_plane).zip(gd.chunks(out_plane)) {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let gr = &gs[(oy * wo + ox) * cout..(oy * wo + ox + 1) * cout];
                            for dy in 0..k {
                                let Some(iy) = src(oy, dy, h) else { continue };
                                for ddx in 0..k {
                                    let Some(ix) = src(ox, ddx, w) else { continue };
                                    let xr = &xs[(iy * w + ix) * cin..(iy * w + ix + 1) * cin];
                                    let tap = (dy * k + ddx) * cin;
                                    for (ci, &a) in xr.iter().enumerate() {
                                        if a == T::zero() {
                                            continue;
                                        }
                                        let dr = &mut dw[(tap + ci) * cout..(tap + ci + 1) * cout];
                                        for (d, &gj) in dr.iter_mut().zip(gr) {
                                            *d += a * gj;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Tensor::from_vec(vec![k, k, cin, cout], dw).expect("shape")
            });
            let db = needs[2].then(|| channel_sums(gd, cout));
            vec![dx, dw, db]
        }),
    ))
}
