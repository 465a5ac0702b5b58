//! Central finite-difference gradient checks in double precision.
//!
//! A function under test maps input tensors to one output tensor. The check
//! reduces the output to a scalar with a fixed random probe, differentiates
//! that scalar on a tape, and compares against `(L(x+δ) − L(x−δ)) / 2δ`
//! evaluated on gradient-free tapes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::ops::weighted_sum;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    pub delta: f64,
    /// Check at most this many coordinates per input (chosen at random).
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            delta: 1e-5,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InputError {
    pub index: usize,
    pub shape: Vec<usize>,
    pub coords_checked: usize,
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)` over checked coordinates.
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub inputs: Vec<InputError>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }
}

fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let diff = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(n.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Check every input of `f` at `inputs`.
pub fn check<F>(inputs: &[Tensor<f64>], opts: GradcheckOptions, f: F) -> Result<GradcheckReport>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let out_shape = tape.shape(out);
    let probe = Tensor::from_fn(out_shape, |_| rng.random_range(-1.0..1.0));
    let loss = weighted_sum(&tape, out, &probe)?;
    let mut grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.take(v)).collect();

    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::no_grad();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&tape, &vars)?;
        let l = weighted_sum(&tape, out, &probe)?;
        Ok(tape.value(l).data()[0])
    };

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut report = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let n = inputs[i].len();
        let coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < n => (0..k).map(|_| rng.random_range(0..n)).collect(),
            _ => (0..n).collect(),
        };
        let mut num = Vec::with_capacity(coords.len());
        let mut ana = Vec::with_capacity(coords.len());
        for &j in &coords {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + opts.delta;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - opts.delta;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            num.push((plus - minus) / (2.0 * opts.delta));
            ana.push(analytic[i].data()[j]);
        }
        report.push(InputError {
            index: i,
            shape: inputs[i].shape().to_vec(),
            coords_checked: coords.len(),
            rel_error: relative_error(&ana, &num),
        });
    }
    Ok(GradcheckReport { inputs: report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;
    use crate::testutil::{rand_tensor, rng};

    #[test]
    fn catches_a_wrong_gradient() {
        // A deliberately broken op: forward x², backward claims 3x.
        let x = Tensor::from_vec([3], vec![0.5, -1.0, 2.0]).unwrap();
        let rep = check(&[x], GradcheckOptions::default(), |tape, v| {
            let xv = tape.value(v[0]);
            Ok(tape.record(
                xv.map(|a| a * a),
                &[v[0]],
                Box::new(move |g, _| {
                    let d = g.data().iter().zip(xv.data()).map(|(g, x)| 3.0 * g * x).collect();
                    vec![Some(Tensor::from_vec(vec![3], d).unwrap())]
                }),
            ))
        })
        .unwrap();
        assert!(rep.max_rel_error() > 0.1);
    }

    #[test]
    fn linear_passes() {
        let mut r = rng(1);
        let inputs = vec![
            rand_tensor(&mut r, &[2, 2, 2, 3]),
            rand_tensor(&mut r, &[3, 4]),
            rand_tensor(&mut r, &[4]),
        ];
        let rep = check(&inputs, GradcheckOptions::default(), |t, v| {
            ops::linear(t, v[0], v[1], v[2])
        })
        .unwrap();
        assert!(rep.max_rel_error() < 1e-8, "{rep:?}");
    }
}
