use crate::autodiff::{Tape, Var};
use crate::dtype::Scalar;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Layer normalization over the trailing (channel) axis of each site.
pub fn layernorm<T: Scalar>(tape: &Tape<T>, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
    let xv = tape.value(x);
    let gv = tape.value(gamma);
    let bv = tape.value(beta);
    let c = xv.last_dim();
    if gv.shape() != [c] || bv.shape() != [c] {
        return Err(Error::dim(
            "layernorm",
            format!(
                "input {:?} with gamma {:?} beta {:?}",
                xv.shape(),
                gv.shape(),
                bv.shape()
            ),
        ));
    }
    let eps = T::of(eps);
    let cn = T::of(c as f64);
    let rows = xv.rows();
    let mut xhat = vec![T::zero(); xv.len()];
    let mut inv_std = vec![T::zero(); rows];
    let mut out = vec![T::zero(); xv.len()];
    for r in 0..rows {
        let xr = &xv.data()[r * c..(r + 1) * c];
        let mean = xr.iter().fold(T::zero(), |s, &v| s + v) / cn;
        let var = xr.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) / cn;
        let inv = T::one() / (var + eps).sqrt();
        inv_std[r] = inv;
        for j in 0..c {
            let xh = (xr[j] - mean) * inv;
            xhat[r * c + j] = xh;
            out[r * c + j] = gv.data()[j] * xh + bv.data()[j];
        }
    }
    let out = Tensor::from_vec(xv.shape().to_vec(), out)?;
    let shape = xv.shape().to_vec();

    Ok(tape.record(
        out,
        &[x, gamma, beta],
        Box::new(move |g, needs| {
            let gd = g.data();
            let dx = needs[0].then(|| {
                let mut dx = vec![T::zero(); gd.len()];
                for r in 0..rows {
                    let gr = &gd[r * c..(r + 1) * c];
                    let xh = &xhat[r * c..(r + 1) * c];
                    let mut sum_d = T::zero();
                    let mut sum_dx = T::zero();
                    for j in 0..c {
                        let d = gr[j] * gv.data()[j];
                        sum_d += d;
                        sum_dx += d * xh[j];
                    }
                    let scale = inv_std[r] / cn;
                    for j in 0..c {
                        let d = gr[j] * gv.data()[j];
                        dx[r * c + j] = scale * (cn * d - sum_d - xh[j] * sum_dx);
                    }
                }
                Tensor::from_vec(shape.clone(), dx).expect("shape")
            });
            let (dg, db) = if needs[1] || needs[2] {
                let mut dg = vec![T::zero(); c];
                let mut db = vec![T::zero(); c];
                for (gr, xh) in gd.chunks(c).zip(xhat.chunks(c)) {
                    for j in 0..c {
                        dg[j] += gr[j] * xh[j];
                        db[j] += gr[j];
                    }
                }
                (
                    Some(Tensor::from_vec(vec![c], dg).expect("shape")),
                    Some(Tensor::from_vec(vec![c], db).expect("shape")),
                )
            } else {
                (None, None)
            };
            vec![dx, dg, db]
        }),
    ))
}
