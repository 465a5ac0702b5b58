use crate::autodiff::{Tape, Var};
use crate::dtype::Scalar;
use crate::error::{Error, Result};
use crate::init::Initializer;
use crate::ops;
use crate::param::{BoundParams, ParamStore};

use super::layers::{Conv, Dense, Norm};
use super::NORM_EPS;

/// ×4 spatial reduction: conv3×3/2 → norm → GELU → conv3×3/2.
#[derive(Debug, Clone)]
pub struct Stem {
    pub input_size: usize,
    pub in_channels: usize,
    pub conv1: Conv,
    pub norm: Norm,
    pub conv2: Conv,
}

impl Stem {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Initializer,
        input_size: usize,
        in_channels: usize,
        out_dim: usize,
    ) -> Result<Self> {
        let mid = (out_dim / 2).max(1);
        Ok(Self {
            input_size,
            in_channels,
            conv1: Conv::new(store, init, "stem.conv1", 3, in_channels, mid, 2)?,
            norm: Norm::new(store, "stem.norm", mid, NORM_EPS)?,
            conv2: Conv::new(store, init, "stem.conv2", 3, mid, out_dim, 2)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &BoundParams, x: Var) -> Result<Var> {
        let shape = tape.shape(x);
        let want = [self.input_size, self.input_size, self.in_channels];
        if shape.len() != 4 || shape[1..] != want {
            return Err(Error::Config(format!(
                "stem expects [B, {}, {}, {}] input, got {shape:?}",
                want[0], want[1], want[2]
            )));
        }
        let y = self.conv1.forward(tape, p, x)?;
        let y = self.norm.forward(tape, p, y)?;
        let y = ops::gelu(tape, y);
        self.conv2.forward(tape, p, y)
    }
}

/// Norm → conv3×3/2 into the next stage width.
#[derive(Debug, Clone)]
pub struct Downsample {
    pub norm: Norm,
    pub conv: Conv,
}

impl Downsample {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Initializer,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Self> {
        Ok(Self {
            norm: Norm::new(store, &format!("{prefix}.norm"), in_dim, NORM_EPS)?,
            conv: Conv::new(store, init, &format!("{prefix}.conv"), 3, in_dim, out_dim, 2)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &BoundParams, x: Var) -> Result<Var> {
        let shape = tape.shape(x);
        if shape.len() != 4 || !shape[1].is_multiple_of(2) || !shape[2].is_multiple_of(2) {
            return Err(Error::dim(
                "downsample",
                format!("spatial dims must be even, got {shape:?}"),
            ));
        }
        let y = self.norm.forward(tape, p, x)?;
        self.conv.forward(tape, p, y)
    }
}

/// Norm → single linear layer, on pooled `[B,1,1,C]` features; returns `[B,K]`.
#[derive(Debug, Clone)]
pub struct Head {
    pub norm: Norm,
    pub fc: Dense,
    pub num_classes: usize,
}

impl Head {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Initializer,
        dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        Ok(Self {
            norm: Norm::new(store, "head.norm", dim, NORM_EPS)?,
            fc: Dense::new(store, init, "head.fc", dim, num_classes)?,
            num_classes,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &BoundParams, pooled: Var) -> Result<Var> {
        let b = tape.shape(pooled)[0];
        let y = self.norm.forward(tape, p, pooled)?;
        let y = self.fc.forward(tape, p, y)?;
        ops::reshape(tape, y, &[b, self.num_classes])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use crate::testutil::{rand_tensor, rng};

    #[test]
    fn stem_stride_arithmetic() {
        for (size, out) in [(224, 56), (64, 16), (32, 8)] {
            let mut store = ParamStore::<f32>::new();
            let stem = Stem::new(&mut store, &mut Initializer::new(0), size, 3, 48).unwrap();
            let tape = Tape::new();
            let p = store.bind(&tape);
            let y = stem
                .forward(&tape, &p, tape.constant(Tensor::zeros([1, size, size, 3])))
                .unwrap();
            assert_eq!(tape.shape(y), vec![1, out, out, 48]);
        }
    }

    #[test]
    fn stem_rejects_wrong_size() {
        let mut store = ParamStore::<f32>::new();
        let stem = Stem::new(&mut store, &mut Initializer::new(0), 64, 3, 8).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let r = stem.forward(&tape, &p, tape.constant(Tensor::zeros([1, 32, 32, 3])));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn downsample_ladder_femto() {
        let mut store = ParamStore::<f32>::new();
        let mut init = Initializer::new(0);
        for (hw, cin, cout) in [(56, 48, 96), (28, 96, 192), (14, 192, 288)] {
            let ds = Downsample::new(&mut store, &mut init, &format!("ds{cin}"), cin, cout).unwrap();
            let tape = Tape::new();
            let p = store.bind(&tape);
            let y = ds
                .forward(&tape, &p, tape.constant(Tensor::zeros([1, hw, hw, cin])))
                .unwrap();
            assert_eq!(tape.shape(y), vec![1, hw / 2, hw / 2, cout]);
        }
    }

    #[test]
    fn downsample_rejects_odd() {
        let mut store = ParamStore::<f32>::new();
        let ds = Downsample::new(&mut store, &mut Initializer::new(0), "ds", 4, 8).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape);
        assert!(ds
            .forward(&tape, &p, tape.constant(Tensor::zeros([1, 7, 7, 4])))
            .is_err());
    }

    #[test]
    fn head_zero_weights_and_batch_equivariance() {
        let mut store = ParamStore::<f64>::new();
        let head = Head::new(&mut store, &mut Initializer::new(1), 6, 21).unwrap();
        let x = rand_tensor(&mut rng(2), &[3, 1, 1, 6]);
        let logits = |store: &ParamStore<f64>, x: &Tensor<f64>| {
            let tape = Tape::new();
            let p = store.bind(&tape);
            let y = head.forward(&tape, &p, tape.constant(x.clone())).unwrap();
            (*tape.value(y)).clone()
        };
        let y = logits(&store, &x);
        assert_eq!(y.shape(), &[3, 21]);
        let perm = x.gather_rows(&[2, 0, 1]);
        assert_eq!(logits(&store, &perm), y.gather_rows(&[2, 0, 1]));

        store.set(head.fc.weight, Tensor::zeros([6, 21])).unwrap();
        assert!(logits(&store, &x).data().iter().all(|&v| v == 0.0));
    }
}
