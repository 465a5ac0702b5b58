use rayon::prelude::*;

use crate::autodiff::{Tape, Var};
use crate::dtype::Scalar;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::PAR_MIN_ROWS;

/// `out[.., :] = x[.., :] · W + b` over the trailing axis.
///
/// `weight` is `[Cin, Cout]`, `bias` is `[Cout]`.
pub fn linear<T: Scalar>(tape: &Tape<T>, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let xv = tape.value(x);
    let wv = tape.value(weight);
    let bv = tape.value(bias);
    let (cin, cout) = match wv.shape() {
        &[a, b] => (a, b),
        s => return Err(Error::dim("linear", format!("weight must be [Cin,Cout], got {s:?}"))),
    };
    if xv.last_dim() != cin {
        return Err(Error::dim(
            "linear",
            format!("input {:?} vs weight {:?}", xv.shape(), wv.shape()),
        ));
    }
    if bv.shape() != [cout] {
        return Err(Error::dim(
            "linear",
            format!("bias {:?} vs weight {:?}", bv.shape(), wv.shape()),
        ));
    }
    let rows = xv.rows();
    let mut out = vec![T::zero(); rows * cout];
    let w = wv.data();
    let b = bv.data();
    out.par_chunks_mut(cout)
        .with_min_len(PAR_MIN_ROWS)
        .zip(xv.data().par_chunks(cin))
        .for_each(|(o, xr)| {
            o.copy_from_slice(b);
            for (i, &a) in xr.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let wr = &w[i * cout..(i + 1) * cout];
                for (oj, &wj) in o.iter_mut().zip(wr) {
                    *oj += a * wj;
                }
            }
        });
    let mut shape = xv.shape().to_vec();
    *shape.last_mut().expect("rank >= 1") = cout;
    let out = Tensor::from_vec(shape, out)?;

    Ok(tape.record(
        out,
        &[x, weight, bias],
        Box::new(move |g, needs| {
            let gd = g.data();
            let dx = needs[0].then(|| {
                let mut dx = vec![T::zero(); rows * cin];
                let wd = wv.data();
                dx.par_chunks_mut(cin)
                    .with_min_len(PAR_MIN_ROWS)
                    .zip(gd.par_chunks(cout))
                    .for_each(|(dxr, gr)| {
                        for (i, d) in dxr.iter_mut().enumerate() {
                            let wr = &wd[i * cout..(i + 1) * cout];
                            *d = gr.iter().zip(wr).fold(T::zero(), |s, (&a, &b)| s + a * b);
                        }
                    });
                Tensor::from_vec(xv.shape().to_vec(), dx).expect("shape")
            });
            let dw = needs[1].then(|| {
                let mut dw = vec![T::zero(); cin * cout];
                for (xr, gr) in xv.data().chunks(cin).zip(gd.chunks(cout)) {
                    for (i, &a) in xr.iter().enumerate() {
                        if a == T::zero() {
                            continue;
                        }
                        for (d, &gj) in dw[i * cout..(i + 1) * cout].iter_mut().zip(gr) {
                            *d += a * gj;
                        }
                    }
                }
                Tensor::from_vec(vec![cin, cout], dw).expect("shape")
            });
            let db = needs[2].then(|| {
                let mut db = vec![T::zero(); cout];
                for gr in gd.chunks(cout) {
                    for (d, &gj) in db.iter_mut().zip(gr) {
                        *d += gj;
                    }
                }
                Tensor::from_vec(vec![cout], db).expect("shape")
            });
            vec![dx, dw, db]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::sum;
    use crate::testutil::{rand_tensor, rng};

    fn run(x: Tensor<f64>, w: Tensor<f64>, b: Tensor<f64>) -> Tensor<f64> {
        let tape = Tape::new();
        let (x, w, b) = (tape.constant(x), tape.constant(w), tape.constant(b));
        let y = linear(&tape, x, w, b).unwrap();
        (*tape.value(y)).clone()
    }

    #[test]
    fn identity_weight() {
        let x = Tensor::from_vec([1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::from_vec([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(run(x, w, Tensor::zeros([2])).data(), &[1.0, 2.0]);
    }

    #[test]
    fn bias_add() {
        let x = Tensor::from_vec([1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::from_vec([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::from_vec([2], vec![3.0, 4.0]).unwrap();
        assert_eq!(run(x, w, b).data(), &[4.0, 6.0]);
    }

    #[test]
    fn matches_triple_loop() {
        let mut r = rng(7);
        let x = rand_tensor(&mut r, &[2, 3, 3, 4]);
        let w = rand_tensor(&mut r, &[4, 5]);
        let b = rand_tensor(&mut r, &[5]);
        let y = run(x.clone(), w.clone(), b.clone());
        assert_eq!(y.shape(), &[2, 3, 3, 5]);
        for n in 0..18 {
            for j in 0..5 {
                let mut s = b.data()[j];
                for i in 0..4 {
                    s += x.data()[n * 4 + i] * w.data()[i * 5 + j];
                }
                assert!((y.data()[n * 5 + j] - s).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros([1, 1, 1, 3]));
        let w = tape.constant(Tensor::zeros([2, 2]));
        let b = tape.constant(Tensor::zeros([2]));
        let msg = linear(&tape, x, w, b).unwrap_err().to_string();
        assert!(msg.contains("[1, 1, 1, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn weight_gradient_is_input_column_sum() {
        let mut r = rng(3);
        let xt = rand_tensor(&mut r, &[2, 2, 2, 3]);
        let tape = Tape::new();
        let x = tape.constant(xt.clone());
        let w = tape.leaf(Tensor::<f64>::ones([3, 2]));
        let b = tape.leaf(Tensor::<f64>::zeros([2]));
        let y = linear(&tape, x, w, b).unwrap();
        let l = sum(&tape, y);
        let g = tape.backward(l).unwrap();
        let gw = g.get(w).unwrap();
        for i in 0..3 {
            let col: f64 = xt.data().chunks(3).map(|r| r[i]).sum();
            for j in 0..2 {
                assert!((gw.data()[i * 2 + j] - col).abs() < 1e-12);
            }
        }
        assert_eq!(g.get(b).unwrap().data(), &[8.0, 8.0]);
    }
}
