use crate::autodiff::{Tape, Var};
use crate::dtype::Scalar;
use crate::error::Result;
use crate::tensor::Tensor;

/// Spatial mean per channel: `[B,H,W,C] -> [B,1,1,C]`.
pub fn global_avg_pool<T: Scalar>(tape: &Tape<T>, x: Var) -> Result<Var> {
    let xv = tape.value(x);
    let (b, h, w, c) = xv.dims4("global_avg_pool")?;
    let hw = h * w;
    let scale = T::one() / T::of(hw as f64);
    let mut out = vec![T::zero(); b * c];
    for bi in 0..b {
        let o = &mut out[bi * c..(bi + 1) * c];
        for px in xv.data()[bi * hw * c..(bi + 1) * hw * c].chunks(c) {
            for (acc, &v) in o.iter_mut().zip(px) {
                *acc += v;
            }
        }
        for v in o.iter_mut() {
            *v *= scale;
        }
    }
    let out = Tensor::from_vec(vec![b, 1, 1, c], out)?;
    Ok(tape.record(
        out,
        &[x],
        Box::new(move |g, _| {
            let mut dx = vec![T::zero(); b * hw * c];
            for bi in 0..b {
                let gr = &g.data()[bi * c..(bi + 1) * c];
                for px in dx[bi * hw * c..(bi + 1) * hw * c].chunks_mut(c) {
                    for (d, &gv) in px.iter_mut().zip(gr) {
                        *d = gv * scale;
                    }
                }
            }
            vec![Some(Tensor::from_vec(vec![b, h, w, c], dx).expect("shape"))]
        }),
    ))
}
