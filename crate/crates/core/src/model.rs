//! The full four-stage network:
//!
//! ```text
//! stem → [stage 1: gated CNN × d1] → DS → [stage 2: FGB × d2] → DS
//!      → [stage 3: FGB × d3] → DS → [stage 4: gated CNN × d4]
//!      → norm → global average pool → head
//! ```

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::blocks::{
    BlockRng, Downsample, FgbCfg, FourierGateBlock, GatedCnnBlock, GatedCnnBlockCfg, Head, Norm, Stem, NORM_EPS,
};
use crate::dtype::Scalar;
use crate::error::{Error, Result};
use crate::init::Initializer;
use crate::ops;
use crate::param::{BoundParams, ParamStore};
use crate::tensor::Tensor;

/// Accepts either a preset name (`"femto"`) or a full spec object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "VariantRepr")]
pub struct VariantSpec {
    pub name: String,
    pub depths: [usize; 4],
    pub dims: [usize; 4],
}

#[derive(Deserialize)]
#[serde(untagged)]
enum VariantRepr {
    Preset(String),
    Spec {
        #[serde(default = "custom_name")]
        name: String,
        depths: [usize; 4],
        dims: [usize; 4],
    },
}

fn custom_name() -> String {
    "custom".into()
}

impl TryFrom<VariantRepr> for VariantSpec {
    type Error = String;

    fn try_from(r: VariantRepr) -> std::result::Result<Self, String> {
        match r {
            VariantRepr::Preset(name) => Self::by_name(&name).map_err(|e| e.to_string()),
            VariantRepr::Spec { name, depths, dims } => Ok(Self { name, depths, dims }),
        }
    }
}

impl VariantSpec {
    pub fn femto() -> Self {
        Self {
            name: "femto".into(),
            depths: [3, 3, 9, 3],
            dims: [48, 96, 192, 288],
        }
    }

    pub fn kobe() -> Self {
        Self {
            name: "kobe".into(),
            depths: [3, 3, 15, 3],
            dims: [48, 96, 192, 288],
        }
    }

    pub fn tiny() -> Self {
        Self {
            name: "tiny".into(),
            depths: [3, 3, 9, 3],
            dims: [96, 192, 384, 576],
        }
    }

    pub fn presets() -> [Self; 3] {
        [Self::femto(), Self::kobe(), Self::tiny()]
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Self::presets()
            .into_iter()
            .find(|v| v.name == name)
            .ok_or_else(|| Error::Config(format!("unknown variant {name:?} (femto, kobe, tiny)")))
    }

    pub fn custom(depths: [usize; 4], dims: [usize; 4]) -> Self {
        Self {
            name: "custom".into(),
            depths,
            dims,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropPathSchedule {
    Constant,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: VariantSpec,
    pub num_classes: usize,
    pub in_channels: usize,
    pub input_size: usize,
    /// Maximum drop-path rate of the Fourier gate blocks.
    pub droppath: f64,
    pub droppath_schedule: DropPathSchedule,
    pub seed: u64,
    pub kernel_size: usize,
    pub expansion_ratio: f64,
    pub conv_ratio: f64,
    pub mlp_ratio: usize,
    pub norm_eps: f64,
    /// Standard deviation of the truncated-normal weight init.
    pub init_std: f64,
    /// When false, stages 2 and 3 use gated CNN blocks instead of Fourier gate blocks.
    pub fourier_stages: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: VariantSpec::femto(),
            num_classes: 21,
            in_channels: 3,
            input_size: 224,
            droppath: 0.0,
            droppath_schedule: DropPathSchedule::Linear,
            seed: 0,
            kernel_size: 7,
            expansion_ratio: 8.0 / 3.0,
            conv_ratio: 1.0,
            mlp_ratio: 4,
            norm_eps: NORM_EPS,
            init_std: crate::init::INIT_STD,
            fourier_stages: true,
        }
    }
}

impl ModelConfig {
    pub fn new(variant: VariantSpec, num_classes: usize) -> Self {
        Self {
            variant,
            num_classes,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || !self.input_size.is_multiple_of(32) {
            return Err(Error::Config(format!(
                "input_size {} must be a positive multiple of 32",
                self.input_size
            )));
        }
        if self.variant.depths.contains(&0) || self.variant.dims.contains(&0) {
            return Err(Error::Config(format!(
                "variant {:?} needs nonzero depths and dims",
                self.variant
            )));
        }
        if self.num_classes == 0 || self.in_channels == 0 {
            return Err(Error::Config("num_classes and in_channels must be >= 1".into()));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config(format!("init_std {} must be > 0", self.init_std)));
        }
        if !(0.0..1.0).contains(&self.droppath) {
            return Err(Error::Config(format!("droppath {} must lie in [0, 1)", self.droppath)));
        }
        Ok(())
    }

    /// Spatial size entering each stage: `input/4, input/8, input/16, input/32`.
    pub fn stage_resolutions(&self) -> [usize; 4] {
        let s = self.input_size;
        [s / 4, s / 8, s / 16, s / 32]
    }

    pub fn stage_kinds(&self) -> [StageKind; 4] {
        let mid = if self.fourier_stages {
            StageKind::Fourier
        } else {
            StageKind::GatedCnn
        };
        [StageKind::GatedCnn, mid, mid, StageKind::GatedCnn]
    }

    fn gated_cfg(&self, dim: usize) -> GatedCnnBlockCfg {
        GatedCnnBlockCfg {
            dim,
            expansion_ratio: self.expansion_ratio,
            conv_ratio: self.conv_ratio,
            kernel_size: self.kernel_size,
            eps: self.norm_eps,
        }
    }

    fn droppath_rate(&self, block_index: usize, total_blocks: usize) -> f64 {
        match self.droppath_schedule {
            DropPathSchedule::Constant => self.droppath,
            DropPathSchedule::Linear if total_blocks > 1 => {
                self.droppath * block_index as f64 / (total_blocks - 1) as f64
            }
            DropPathSchedule::Linear => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageKind {
    #[serde(rename = "GatedCNN")]
    GatedCnn,
    #[serde(rename = "FGB")]
    Fourier,
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Block<T> {
    GatedCnn(GatedCnnBlock),
    Fourier(FourierGateBlock<T>),
}

#[derive(Debug, Clone)]
pub struct Stage<T> {
    /// 1-based, matching parameter names.
    pub index: usize,
    pub kind: StageKind,
    pub dim: usize,
    pub resolution: usize,
    pub downsample: Option<Downsample>,
    pub blocks: Vec<Block<T>>,
}

impl<T> Stage<T> {
    pub fn prefix(&self) -> String {
        format!("stage{}", self.index)
    }
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub cfg: ModelConfig,
    pub params: ParamStore<T>,
    pub stem: Stem,
    pub stages: Vec<Stage<T>>,
    pub norm: Norm,
    pub head: Head,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: usize,
    pub kind: StageKind,
    pub blocks: usize,
    pub dim: usize,
    pub resolution: [usize; 2],
    pub downsample_params: usize,
    pub block_params: usize,
    /// `downsample_params + block_params`.
    pub params: usize,
    pub gate_logits_per_block: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub variant: String,
    pub depths: [usize; 4],
    pub dims: [usize; 4],
    pub input_size: usize,
    pub in_channels: usize,
    pub num_classes: usize,
    pub stem_params: usize,
    pub stages: Vec<StageSummary>,
    /// Final norm plus classification head.
    pub head_params: usize,
    pub total_params: usize,
}

impl<T: Scalar> Model<T> {
    pub fn build(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut init = Initializer::with_weight_std(cfg.seed, cfg.init_std);
        let dims = cfg.variant.dims;
        let depths = cfg.variant.depths;
        let res = cfg.stage_resolutions();
        let kinds = cfg.stage_kinds();
        let total_blocks: usize = depths.iter().sum();

        let stem = Stem::new(&mut store, &mut init, cfg.input_size, cfg.in_channels, dims[0])?;
        let mut stages = Vec::with_capacity(4);
        let mut global_block = 0;
        for s in 0..4 {
            let index = s + 1;
            let downsample = if s == 0 {
                None
            } else {
                Some(Downsample::new(
                    &mut store,
                    &mut init,
                    &format!("stage{index}.downsample"),
                    dims[s - 1],
                    dims[s],
                )?)
            };
            let mut blocks = Vec::with_capacity(depths[s]);
            for i in 0..depths[s] {
                let prefix = format!("stage{index}.block{i}");
                let block = match kinds[s] {
                    StageKind::GatedCnn => Block::GatedCnn(GatedCnnBlock::new(
                        &mut store,
                        &mut init,
                        &prefix,
                        cfg.gated_cfg(dims[s]),
                    )?),
                    StageKind::Fourier => {
                        let fcfg = FgbCfg {
                            mlp_ratio: cfg.mlp_ratio,
                            droppath: cfg.droppath_rate(global_block, total_blocks),
                            eps: cfg.norm_eps,
                            ..FgbCfg::new(dims[s], res[s], res[s])
                        };
                        Block::Fourier(FourierGateBlock::new(&mut store, &mut init, &prefix, fcfg)?)
                    }
                };
                blocks.push(block);
                global_block += 1;
            }
            stages.push(Stage {
                index,
                kind: kinds[s],
                dim: dims[s],
                resolution: res[s],
                downsample,
                blocks,
            });
        }
        let norm = Norm::new(&mut store, "norm", dims[3], cfg.norm_eps)?;
        let head = Head::new(&mut store, &mut init, dims[3], cfg.num_classes)?;
        Ok(Self {
            cfg,
            params: store,
            stem,
            stages,
            norm,
            head,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.cfg.num_classes
    }

    /// Exact number of learnable scalars, gate logits included.
    pub fn count_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn fourier_blocks(&self) -> impl Iterator<Item = &FourierGateBlock<T>> {
        self.stages.iter().flat_map(|s| {
            s.blocks.iter().filter_map(|b| match b {
                Block::Fourier(f) => Some(f),
                Block::GatedCnn(_) => None,
            })
        })
    }

    pub fn fourier_blocks_mut(&mut self) -> impl Iterator<Item = &mut FourierGateBlock<T>> {
        self.stages.iter_mut().flat_map(|s| {
            s.blocks.iter_mut().filter_map(|b| match b {
                Block::Fourier(f) => Some(f),
                Block::GatedCnn(_) => None,
            })
        })
    }

    pub fn has_gate_overrides(&self) -> bool {
        self.fourier_blocks().any(|b| b.has_gate_override())
    }

    /// Logits `[B, K]` for images `x` of shape `[B, S, S, C_in]`.
    pub fn forward(&self, tape: &Tape<T>, p: &BoundParams, x: Var, training: bool, rng: &mut BlockRng) -> Result<Var> {
        let finite = |v: Var, where_: &str| -> Result<()> {
            if tape.value(v).all_finite() {
                Ok(())
            } else {
                Err(Error::Numerical(format!("non-finite activations after {where_}")))
            }
        };
        let mut h = self.stem.forward(tape, p, x)?;
        finite(h, "stem")?;
        for stage in &self.stages {
            if let Some(ds) = &stage.downsample {
                h = ds.forward(tape, p, h)?;
            }
            for block in &stage.blocks {
                h = match block {
                    Block::GatedCnn(b) => b.forward(tape, p, h)?,
                    Block::Fourier(b) => b.forward(tape, p, h, training, rng)?,
                };
            }
            finite(h, &stage.prefix())?;
        }
        let h = self.norm.forward(tape, p, h)?;
        let pooled = ops::global_avg_pool(tape, h)?;
        let logits = self.head.forward(tape, p, pooled)?;
        finite(logits, "head")?;
        Ok(logits)
    }

    /// Eval-mode logits without recording gradients.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::no_grad();
        let p = self.params.bind(&tape);
        let xv = tape.constant(x.clone());
        let mut rng = <BlockRng as rand::SeedableRng>::seed_from_u64(0);
        let y = self.forward(&tape, &p, xv, false, &mut rng)?;
        Ok((*tape.value(y)).clone())
    }

    /// Mean cross-entropy on a batch and its gradient for every parameter.
    pub fn loss_and_grads(
        &self,
        x: &Tensor<T>,
        targets: &Tensor<T>,
        training: bool,
        rng: &mut BlockRng,
    ) -> Result<(f64, Vec<Tensor<T>>)> {
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let xv = tape.constant(x.clone());
        let logits = self.forward(&tape, &p, xv, training, rng)?;
        let loss = ops::softmax_cross_entropy(&tape, logits, targets)?;
        let value = tape.value(loss).data()[0].f64();
        let mut grads = tape.backward(loss)?;
        Ok((value, self.params.collect_grads(&p, &mut grads)))
    }

    pub fn describe(&self) -> ModelSummary {
        let count = |prefix: &str| self.params.num_scalars_with_prefix(prefix);
        let stages = self
            .stages
            .iter()
            .map(|s| {
                let prefix = s.prefix();
                let downsample_params = count(&format!("{prefix}.downsample."));
                let block_params = count(&format!("{prefix}.block"));
                StageSummary {
                    stage: s.index,
                    kind: s.kind,
                    blocks: s.blocks.len(),
                    dim: s.dim,
                    resolution: [s.resolution, s.resolution],
                    downsample_params,
                    block_params,
                    params: downsample_params + block_params,
                    gate_logits_per_block: s.blocks.first().and_then(|b| match b {
                        Block::Fourier(f) => Some(f.gate.num_logits()),
                        Block::GatedCnn(_) => None,
                    }),
                }
            })
            .collect();
        ModelSummary {
            variant: self.cfg.variant.name.clone(),
            depths: self.cfg.variant.depths,
            dims: self.cfg.variant.dims,
            input_size: self.cfg.input_size,
            in_channels: self.cfg.in_channels,
            num_classes: self.cfg.num_classes,
            stem_params: count("stem."),
            stages,
            head_params: count("norm.") + count("head."),
            total_params: self.count_params(),
        }
    }
}
