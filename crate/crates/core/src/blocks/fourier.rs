use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::dtype::Scalar;
use crate::error::{Error, Result};
use crate::init::{Initializer, INIT_STD};
use crate::ops;
use crate::param::{BoundParams, ParamId, ParamStore};
use crate::spectral::{FourierFilterGate, GateSource};
use crate::tensor::Tensor;

use super::droppath::droppath;
use super::layers::{Dense, Norm};
use super::{BlockRng, NORM_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FgbCfg {
    pub dim: usize,
    pub height: usize,
    pub width: usize,
    pub mlp_ratio: usize,
    pub droppath: f64,
    pub eps: f64,
}

impl FgbCfg {
    pub fn new(dim: usize, height: usize, width: usize) -> Self {
        Self {
            dim,
            height,
            width,
            mlp_ratio: 4,
            droppath: 0.0,
            eps: NORM_EPS,
        }
    }

    pub fn mlp_hidden(&self) -> usize {
        self.mlp_ratio * self.dim
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.droppath) {
            return Err(Error::Config(format!(
                "drop-path rate {} must lie in [0, 1)",
                self.droppath
            )));
        }
        if self.dim == 0 || self.height == 0 || self.width == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config(format!("degenerate Fourier gate block {self:?}")));
        }
        Ok(())
    }
}

/// Transformer-style block with the Fourier filter gate as token mixer:
///
/// ```text
/// x1 = x  + DropPath(FFG(Norm1(x)))
/// y  = x1 + DropPath(MLP(Norm2(x1)))
/// ```
#[derive(Debug, Clone)]
pub struct FourierGateBlock<T> {
    pub cfg: FgbCfg,
    pub norm1: Norm,
    pub gate: FourierFilterGate<T>,
    pub gate_logits: ParamId,
    pub norm2: Norm,
    pub fc1: Dense,
    pub fc2: Dense,
    gate_override: Option<Tensor<T>>,
}

impl<T: Scalar> FourierGateBlock<T> {
    pub fn new(store: &mut ParamStore<T>, init: &mut Initializer, prefix: &str, cfg: FgbCfg) -> Result<Self> {
        cfg.validate()?;
        let norm1 = Norm::new(store, &format!("{prefix}.norm1"), cfg.dim, cfg.eps)?;
        let gate = FourierFilterGate::new(cfg.dim, cfg.height, cfg.width)?;
        let gate_logits = store.add(
            format!("{prefix}.ffg.weight"),
            init.normal(&gate.mask_shape(), INIT_STD),
        )?;
        let norm2 = Norm::new(store, &format!("{prefix}.norm2"), cfg.dim, cfg.eps)?;
        let fc1 = Dense::new(store, init, &format!("{prefix}.mlp.fc1"), cfg.dim, cfg.mlp_hidden())?;
        let fc2 = Dense::new(store, init, &format!("{prefix}.mlp.fc2"), cfg.mlp_hidden(), cfg.dim)?;
        Ok(Self {
            cfg,
            norm1,
            gate,
            gate_logits,
            norm2,
            fc1,
            fc2,
            gate_override: None,
        })
    }

    /// Replace `sigmoid(w)` with an explicit mask (test hook). `None` restores
    /// the learned gate.
    pub fn set_gate_override(&mut self, mask: Option<Tensor<T>>) -> Result<()> {
        if let Some(m) = &mask {
            if m.shape() != self.gate.mask_shape() {
                return Err(Error::Config(format!(
                    "override mask {:?} vs gate shape {:?}",
                    m.shape(),
                    self.gate.mask_shape()
                )));
            }
        }
        self.gate_override = mask;
        Ok(())
    }

    pub fn has_gate_override(&self) -> bool {
        self.gate_override.is_some()
    }

    /// The spectral filter sub-layer alone: `FFG(Norm1(x))`.
    pub fn filter_branch(&self, tape: &Tape<T>, p: &BoundParams, x: Var) -> Result<Var> {
        let xn = self.norm1.forward(tape, p, x)?;
        let source = match &self.gate_override {
            Some(m) => GateSource::Override(m),
            None => GateSource::Logits(p.var(self.gate_logits)),
        };
        self.gate.forward(tape, xn, source)
    }

    pub fn forward(&self, tape: &Tape<T>, p: &BoundParams, x: Var, training: bool, rng: &mut BlockRng) -> Result<Var> {
        let shape = tape.shape(x);
        let (h, w) = self.gate.resolution();
        if shape.len() != 4 || shape[1] != h || shape[2] != w || shape[3] != self.cfg.dim {
            return Err(Error::Config(format!(
                "Fourier gate block bound to {h}x{w}x{} got input {shape:?}",
                self.cfg.dim
            )));
        }
        let z1 = self.filter_branch(tape, p, x)?;
        let z1 = droppath(tape, z1, self.cfg.droppath, training, rng)?;
        let x1 = ops::add(tape, x, z1)?;

        let xn = self.norm2.forward(tape, p, x1)?;
        let hidden = ops::gelu(tape, self.fc1.forward(tape, p, xn)?);
        let z2 = self.fc2.forward(tape, p, hidden)?;
        let z2 = droppath(tape, z2, self.cfg.droppath, training, rng)?;
        ops::add(tape, x1, z2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::droppath_factors;
    use crate::testutil::{rand_tensor, rng};

    fn block(cfg: FgbCfg) -> (ParamStore<f64>, FourierGateBlock<f64>) {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(9);
        let b = FourierGateBlock::new(&mut store, &mut init, "fgb", cfg).unwrap();
        (store, b)
    }

    fn run(
        store: &ParamStore<f64>,
        b: &FourierGateBlock<f64>,
        x: &Tensor<f64>,
        training: bool,
        seed: u64,
    ) -> Result<Tensor<f64>> {
        let tape = Tape::new();
        let p = store.bind(&tape);
        let y = b.forward(&tape, &p, tape.constant(x.clone()), training, &mut rng(seed))?;
        Ok((*tape.value(y)).clone())
    }

    #[test]
    fn dead_branches_give_identity() {
        let (mut store, mut b) = block(FgbCfg::new(8, 4, 4));
        b.set_gate_override(Some(Tensor::zeros(b.gate.mask_shape()))).unwrap();
        store.set(b.fc2.weight, Tensor::zeros([32, 8])).unwrap();
        let x = rand_tensor(&mut rng(1), &[2, 4, 4, 8]);
        assert_eq!(run(&store, &b, &x, true, 0).unwrap(), x);
    }

    #[test]
    fn eval_is_deterministic() {
        let mut cfg = FgbCfg::new(8, 7, 7);
        cfg.droppath = 0.5;
        let (store, b) = block(cfg);
        let x = rand_tensor(&mut rng(2), &[3, 7, 7, 8]);
        let a = run(&store, &b, &x, false, 1).unwrap();
        let c = run(&store, &b, &x, false, 2).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn training_droppath_matches_seeded_mask() {
        let mut cfg = FgbCfg::new(4, 4, 4);
        cfg.droppath = 0.5;
        let (mut store, b) = block(cfg);
        // Silence the MLP branch so only the filter branch is dropped.
        store.set(b.fc2.weight, Tensor::zeros([16, 4])).unwrap();
        let batch = 16;
        let x = rand_tensor(&mut rng(3), &[batch, 4, 4, 4]);
        let eval = run(&store, &b, &x, false, 0).unwrap();
        let train = run(&store, &b, &x, true, 42).unwrap();
        let factors: Vec<f64> = droppath_factors(batch, 0.5, &mut rng(42)).unwrap();
        assert!(factors.contains(&0.0) && factors.contains(&2.0));
        let per = 4 * 4 * 4;
        for (bi, &f) in factors.iter().enumerate() {
            for j in bi * per..(bi + 1) * per {
                let branch = eval.data()[j] - x.data()[j];
                let want = x.data()[j] + f * branch;
                assert!((train.data()[j] - want).abs() < 1e-12);
                if f == 0.0 {
                    assert_eq!(train.data()[j], x.data()[j]);
                }
            }
        }
    }

    #[test]
    fn resolution_mismatch_is_config_error() {
        let (store, b) = block(FgbCfg::new(8, 4, 4));
        let x = Tensor::zeros([1, 8, 8, 8]);
        assert!(matches!(run(&store, &b, &x, false, 0), Err(Error::Config(_))));
    }

    #[test]
    fn gate_logit_count() {
        let (_, b) = block(FgbCfg::new(96, 28, 28));
        assert_eq!(b.gate.num_logits(), 96 * 28 * 15);
    }
}
