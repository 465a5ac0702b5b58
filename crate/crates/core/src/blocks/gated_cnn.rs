use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::dtype::Scalar;
use crate::error::{Error, Result};
use crate::init::Initializer;
use crate::ops;
use crate::param::{BoundParams, ParamStore};

use super::layers::{Dense, DepthwiseConv, Norm};
use super::NORM_EPS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatedCnnBlockCfg {
    pub dim: usize,
    pub expansion_ratio: f64,
    pub conv_ratio: f64,
    pub kernel_size: usize,
    pub eps: f64,
}

impl GatedCnnBlockCfg {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            expansion_ratio: 8.0 / 3.0,
            conv_ratio: 1.0,
            kernel_size: 7,
            eps: NORM_EPS,
        }
    }

    /// Width `h` of the gated hidden state; `fc1` produces `2h` channels.
    pub fn hidden(&self) -> usize {
        (self.expansion_ratio * self.dim as f64).round() as usize
    }

    pub fn conv_channels(&self) -> usize {
        (self.conv_ratio * self.dim as f64).round() as usize
    }

    pub fn identity_channels(&self) -> usize {
        self.hidden() - self.conv_channels()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("gated CNN block dim must be >= 1".into()));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "depthwise kernel size {} must be odd",
                self.kernel_size
            )));
        }
        if self.conv_channels() == 0 || self.conv_channels() > self.hidden() {
            return Err(Error::Config(format!(
                "conv channels {} must lie in 1..={} (hidden)",
                self.conv_channels(),
                self.hidden()
            )));
        }
        Ok(())
    }
}

/// Residual block: norm → fc1 (2h) → split into gate `g` (h), identity `i`
/// (h − c) and conv path `c` → depthwise conv on `c` →
/// `Z = σ(g) ⊙ [i, conv(c)]` → `fc2(GELU(Z))` → add input.
#[derive(Debug, Clone)]
pub struct GatedCnnBlock {
    pub cfg: GatedCnnBlockCfg,
    pub norm: Norm,
    pub fc1: Dense,
    pub conv: DepthwiseConv,
    pub fc2: Dense,
}

impl GatedCnnBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Initializer,
        prefix: &str,
        cfg: GatedCnnBlockCfg,
    ) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden();
        Ok(Self {
            cfg,
            norm: Norm::new(store, &format!("{prefix}.norm"), cfg.dim, cfg.eps)?,
            fc1: Dense::new(store, init, &format!("{prefix}.fc1"), cfg.dim, 2 * h)?,
            conv: DepthwiseConv::new(
                store,
                init,
                &format!("{prefix}.conv"),
                cfg.kernel_size,
                cfg.conv_channels(),
            )?,
            fc2: Dense::new(store, init, &format!("{prefix}.fc2"), h, cfg.dim)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &BoundParams, x: Var) -> Result<Var> {
        let shape = tape.shape(x);
        if shape.len() != 4 || shape[3] != self.cfg.dim {
            return Err(Error::dim(
                "gated_cnn_forward",
                format!("input {shape:?} vs block dim {}", self.cfg.dim),
            ));
        }
        let h = self.cfg.hidden();
        let cc = self.cfg.conv_channels();
        let id = h - cc;

        let xn = self.norm.forward(tape, p, x)?;
        let u = self.fc1.forward(tape, p, xn)?;
        let parts = ops::split_last(tape, u, &[h, id, cc])?;
        let (g, i, c) = (parts[0], parts[1], parts[2]);
        let c = self.conv.forward(tape, p, c)?;
        let mixed = if id == 0 { c } else { ops::concat_last(tape, &[i, c])? };
        let z = ops::mul(tape, ops::sigmoid(tape, g), mixed)?;
        let y = self.fc2.forward(tape, p, ops::gelu(tape, z))?;
        ops::add(tape, x, y)
    }
}
