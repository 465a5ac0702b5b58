use crate::autodiff::{Tape, Var};
use crate::dtype::Scalar;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::same_shape;

pub fn add<T: Scalar>(tape: &Tape<T>, a: Var, b: Var) -> Result<Var> {
    let av = tape.value(a);
    let bv = tape.value(b);
    if av.shape() != bv.shape() {
        return Err(Error::dim("add", format!("{:?} vs {:?}", av.shape(), bv.shape())));
    }
    let out = Tensor::from_vec(
        av.shape().to_vec(),
        av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect(),
    )?;
    Ok(tape.record(
        out,
        &[a, b],
        Box::new(|g, needs| vec![needs[0].then(|| g.clone()), needs[1].then(|| g.clone())]),
    ))
}

pub fn mul<T: Scalar>(tape: &Tape<T>, a: Var, b: Var) -> Result<Var> {
    let av = tape.value(a);
    let bv = tape.value(b);
    if av.shape() != bv.shape() {
        return Err(Error::dim("mul", format!("{:?} vs {:?}", av.shape(), bv.shape())));
    }
    let out = Tensor::from_vec(
        av.shape().to_vec(),
        av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect(),
    )?;
    Ok(tape.record(
        out,
        &[a, b],
        Box::new(move |g, needs| {
            let da = needs[0].then(|| same_shape(g, g.data().iter().zip(bv.data()).map(|(&g, &y)| g * y).collect()));
            let db = needs[1].then(|| same_shape(g, g.data().iter().zip(av.data()).map(|(&g, &x)| g * x).collect()));
            vec![da, db]
        }),
    ))
}

/// Split the trailing axis into consecutive pieces of the given widths.
pub fn split_last<T: Scalar>(tape: &Tape<T>, x: Var, widths: &[usize]) -> Result<Vec<Var>> {
    let xv = tape.value(x);
    let c = xv.last_dim();
    if widths.iter().sum::<usize>() != c {
        return Err(Error::dim(
            "split_last",
            format!("widths {widths:?} do not sum to {c} channels"),
        ));
    }
    let rows = xv.rows();
    let mut outs = Vec::with_capacity(widths.len());
    let mut start = 0;
    for &wd in widths {
        let mut data = Vec::with_capacity(rows * wd);
        for r in xv.data().chunks(c) {
            data.extend_from_slice(&r[start..start + wd]);
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = wd;
        let full_shape = xv.shape().to_vec();
        let offset = start;
        let piece = Tensor::from_vec(shape, data)?;
        outs.push(tape.record(
            piece,
            &[x],
            Box::new(move |g, _| {
                let mut dx = vec![T::zero(); rows * c];
                for (dr, gr) in dx.chunks_mut(c).zip(g.data().chunks(wd)) {
                    dr[offset..offset + wd].copy_from_slice(gr);
                }
                vec![Some(Tensor::from_vec(full_shape, dx).expect("shape"))]
            }),
        ));
        start += wd;
    }
    Ok(outs)
}

/// Concatenate along the trailing axis.
pub fn concat_last<T: Scalar>(tape: &Tape<T>, parts: &[Var]) -> Result<Var> {
    let values: Vec<_> = parts.iter().map(|&p| tape.value(p)).collect();
    let first = values
        .first()
        .ok_or_else(|| Error::dim("concat_last", "nothing to concatenate"))?;
    let lead = &first.shape()[..first.rank() - 1];
    for v in &values {
        if &v.shape()[..v.rank() - 1] != lead {
            return Err(Error::dim(
                "concat_last",
                format!("{:?} vs {:?}", v.shape(), first.shape()),
            ));
        }
    }
    let widths: Vec<usize> = values.iter().map(|v| v.last_dim()).collect();
    let c: usize = widths.iter().sum();
    let rows = first.rows();
    let mut data = Vec::with_capacity(rows * c);
    for r in 0..rows {
        for (v, &wd) in values.iter().zip(&widths) {
            data.extend_from_slice(&v.data()[r * wd..(r + 1) * wd]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(c);
    let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
    let out = Tensor::from_vec(shape, data)?;
    Ok(tape.record(
        out,
        parts,
        Box::new(move |g, needs| {
            let mut start = 0;
            let mut grads = Vec::with_capacity(widths.len());
            for ((&wd, shape), &need) in widths.iter().zip(shapes).zip(needs) {
                if need {
                    let mut d = Vec::with_capacity(rows * wd);
                    for gr in g.data().chunks(c) {
                        d.extend_from_slice(&gr[start..start + wd]);
                    }
                    grads.push(Some(Tensor::from_vec(shape, d).expect("shape")));
                } else {
                    grads.push(None);
                }
                start += wd;
            }
            grads
        }),
    ))
}

pub fn reshape<T: Scalar>(tape: &Tape<T>, x: Var, shape: &[usize]) -> Result<Var> {
    let xv = tape.value(x);
    let old = xv.shape().to_vec();
    let out = (*xv).clone().reshape(shape.to_vec())?;
    Ok(tape.record(
        out,
        &[x],
        Box::new(move |g, _| vec![Some(g.clone().reshape(old).expect("shape"))]),
    ))
}

/// Multiply every element of sample `b` (axis 0) by `factors[b]`.
pub fn scale_rows<T: Scalar>(tape: &Tape<T>, x: Var, factors: &[T]) -> Result<Var> {
    let xv = tape.value(x);
    let b = xv.shape().first().copied().unwrap_or(0);
    if factors.len() != b {
        return Err(Error::dim(
            "scale_rows",
            format!("{} factors for batch {b}", factors.len()),
        ));
    }
    let per = xv.len().checked_div(b).unwrap_or(0);
    let scale = move |t: &Tensor<T>, f: &[T]| -> Vec<T> {
        t.data()
            .chunks(per.max(1))
            .zip(f)
            .flat_map(|(chunk, &s)| chunk.iter().map(move |&v| v * s))
            .collect()
    };
    let out = Tensor::from_vec(xv.shape().to_vec(), scale(&xv, factors))?;
    let factors = factors.to_vec();
    Ok(tape.record(
        out,
        &[x],
        Box::new(move |g, _| vec![Some(same_shape(g, scale(g, &factors)))]),
    ))
}

/// Sum of all elements, as a `[1]` tensor.
pub fn sum<T: Scalar>(tape: &Tape<T>, x: Var) -> Var {
    let xv = tape.value(x);
    let shape = xv.shape().to_vec();
    tape.record(
        Tensor::scalar(xv.sum()),
        &[x],
        Box::new(move |g, _| vec![Some(Tensor::full(shape, g.data()[0]))]),
    )
}

/// `Σ x ⊙ weights`, a fixed linear functional of `x`.
pub fn weighted_sum<T: Scalar>(tape: &Tape<T>, x: Var, weights: &Tensor<T>) -> Result<Var> {
    let xv = tape.value(x);
    if xv.shape() != weights.shape() {
        return Err(Error::dim(
            "weighted_sum",
            format!("{:?} vs {:?}", xv.shape(), weights.shape()),
        ));
    }
    let s = xv
        .data()
        .iter()
        .zip(weights.data())
        .fold(T::zero(), |a, (&x, &w)| a + x * w);
    let weights = weights.clone();
    Ok(tape.record(
        Tensor::scalar(s),
        &[x],
        Box::new(move |g, _| vec![Some(weights.map(|w| w * g.data()[0]))]),
    ))
}
