//! Finite-difference checks over every differentiable primitive and block,
//! each at several shapes. Shared by the test suite and the CLI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Tape, Var};
use crate::blocks::{
    droppath, BlockRng, Downsample, FgbCfg, FourierGateBlock, GatedCnnBlock, GatedCnnBlockCfg, Head, Stem,
};
use crate::error::Result;
use crate::gradcheck::{check, GradcheckOptions, GradcheckReport};
use crate::init::Initializer;
use crate::model::{Model, ModelConfig, VariantSpec};
use crate::ops;
use crate::param::{BoundParams, ParamStore};
use crate::spectral::{FourierFilterGate, GateSource};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize)]
pub struct CaseResult {
    pub name: String,
    /// Shape of the primary input.
    pub shape: Vec<usize>,
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Tolerance this case is held to.
    pub tolerance: f64,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Every case, the whole model included, is held to this.
pub const TOLERANCE: f64 = 1e-6;

/// Names accepted by [`run`].
pub const CASES: &[&str] = &[
    "linear",
    "conv2d",
    "conv2d_stride2",
    "dwconv2d",
    "gelu",
    "sigmoid",
    "layernorm",
    "global_avg_pool",
    "softmax_cross_entropy",
    "add",
    "mul",
    "split_concat",
    "scale_rows",
    "droppath",
    "ffg",
    "gated_cnn",
    "fgb",
    "stem",
    "downsample",
    "head",
    "model",
];

/// Cap on coordinates checked per input tensor, keeping large blocks fast.
const MAX_COORDS: usize = 48;

fn uniform(r: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| r.random_range(-scale..scale))
}

fn opts(seed: u64) -> GradcheckOptions {
    GradcheckOptions {
        max_coords: Some(MAX_COORDS),
        seed,
        ..GradcheckOptions::default()
    }
}

/// Check a parameterized module: inputs are `extra` followed by every
/// parameter of `store`, all perturbed.
fn check_module<F>(store: &ParamStore<f64>, extra: Vec<Tensor<f64>>, seed: u64, f: F) -> Result<GradcheckReport>
where
    F: Fn(&Tape<f64>, &BoundParams, &[Var]) -> Result<Var>,
{
    let n_extra = extra.len();
    let mut inputs = extra;
    inputs.extend(store.iter().map(|(_, p)| (*p.value).clone()));
    check(&inputs, opts(seed), |tape, vars| {
        let bound = BoundParams::from_vars(vars[n_extra..].to_vec());
        f(tape, &bound, &vars[..n_extra])
    })
}

/// Replace every parameter with uniform noise so the check is not taken at
/// the near-linear initialization point. Norm gains are kept near 1.
fn randomize(store: &mut ParamStore<f64>, r: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.name.clone())).collect();
    for (id, name) in ids {
        let shape = store.get(id).shape().to_vec();
        let mut t = uniform(r, &shape, 0.5);
        if name.ends_with("norm.weight") || name.ends_with("norm1.weight") || name.ends_with("norm2.weight") {
            t = t.map(|v| 1.0 + v);
        }
        store.set(id, t).expect("same shape");
    }
}

fn case(name: &str, seed: u64) -> Result<Vec<(Vec<usize>, GradcheckReport, f64)>> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let shapes: [[usize; 4]; 3] = [[1, 4, 4, 8], [2, 5, 7, 3], [2, 6, 8, 5]];
    let mut out = Vec::new();
    for (si, &s) in shapes.iter().enumerate() {
        let seed = seed.wrapping_add(si as u64);
        let c = s[3];
        let x = uniform(&mut r, &s, 1.0);
        let rep = match name {
            "linear" => {
                let inputs = vec![x, uniform(&mut r, &[c, c + 2], 1.0), uniform(&mut r, &[c + 2], 1.0)];
                check(&inputs, opts(seed), |t, v| ops::linear(t, v[0], v[1], v[2]))?
            }
            "conv2d" | "conv2d_stride2" => {
                let stride = if name == "conv2d" { 1 } else { 2 };
                let inputs = vec![x, uniform(&mut r, &[3, 3, c, 4], 1.0), uniform(&mut r, &[4], 1.0)];
                check(&inputs, opts(seed), |t, v| ops::conv2d(t, v[0], v[1], v[2], stride))?
            }
            "dwconv2d" => {
                let k = [3, 5, 7][si];
                let inputs = vec![x, uniform(&mut r, &[k, k, c], 1.0), uniform(&mut r, &[c], 1.0)];
                check(&inputs, opts(seed), |t, v| ops::dwconv2d(t, v[0], v[1], v[2]))?
            }
            "gelu" => check(&[x.map(|v| 3.0 * v)], opts(seed), |t, v| Ok(ops::gelu(t, v[0])))?,
            "sigmoid" => check(&[x.map(|v| 4.0 * v)], opts(seed), |t, v| Ok(ops::sigmoid(t, v[0])))?,
            "layernorm" => {
                let inputs = vec![x, uniform(&mut r, &[c], 1.0), uniform(&mut r, &[c], 1.0)];
                check(&inputs, opts(seed), |t, v| ops::layernorm(t, v[0], v[1], v[2], 1e-6))?
            }
            "global_avg_pool" => check(&[x], opts(seed), |t, v| ops::global_avg_pool(t, v[0]))?,
            "softmax_cross_entropy" => {
                let k = c + 1;
                let logits = uniform(&mut r, &[s[0] * s[1], k], 2.0);
                let raw = uniform(&mut r, &[s[0] * s[1], k], 1.0).map(|v| v.abs() + 0.1);
                let mut targets = raw.clone();
                for row in targets.data_mut().chunks_mut(k) {
                    let z: f64 = row.iter().sum();
                    row.iter_mut().for_each(|v| *v /= z);
                }
                check(&[logits], opts(seed), |t, v| {
                    ops::softmax_cross_entropy(t, v[0], &targets)
                })?
            }
            "add" => check(&[x.clone(), uniform(&mut r, &s, 1.0)], opts(seed), |t, v| {
                ops::add(t, v[0], v[1])
            })?,
            "mul" => check(&[x.clone(), uniform(&mut r, &s, 1.0)], opts(seed), |t, v| {
                ops::mul(t, v[0], v[1])
            })?,
            "split_concat" => {
                let widths = [1, c - 1];
                check(&[x], opts(seed), |t, v| {
                    let parts = ops::split_last(t, v[0], &widths)?;
                    let g = ops::gelu(t, parts[1]);
                    ops::concat_last(t, &[g, parts[0]])
                })?
            }
            "scale_rows" => {
                let f: Vec<f64> = (0..s[0]).map(|_| r.random_range(-2.0..2.0)).collect();
                check(&[x], opts(seed), |t, v| ops::scale_rows(t, v[0], &f))?
            }
            "droppath" => check(&[x], opts(seed), |t, v| {
                let mut rng = BlockRng::seed_from_u64(seed);
                droppath(t, v[0], 0.4, true, &mut rng)
            })?,
            "ffg" => {
                let gate = FourierFilterGate::<f64>::new(c, s[1], s[2])?;
                let w = uniform(&mut r, &gate.mask_shape(), 2.0);
                check(&[x, w], opts(seed), |t, v| {
                    gate.forward(t, v[0], GateSource::Logits(v[1]))
                })?
            }
            "gated_cnn" => {
                let mut store = ParamStore::new();
                let cfg = GatedCnnBlockCfg {
                    kernel_size: [3, 5, 7][si],
                    ..GatedCnnBlockCfg::new(c)
                };
                let block = GatedCnnBlock::new(&mut store, &mut Initializer::new(seed), "b", cfg)?;
                randomize(&mut store, &mut r);
                check_module(&store, vec![x], seed, |t, p, v| block.forward(t, p, v[0]))?
            }
            "fgb" => {
                let mut store = ParamStore::new();
                let cfg = FgbCfg {
                    droppath: 0.3,
                    ..FgbCfg::new(c, s[1], s[2])
                };
                let block = FourierGateBlock::new(&mut store, &mut Initializer::new(seed), "b", cfg)?;
                randomize(&mut store, &mut r);
                check_module(&store, vec![x], seed, |t, p, v| {
                    let mut rng = BlockRng::seed_from_u64(seed);
                    block.forward(t, p, v[0], true, &mut rng)
                })?
            }
            "stem" => {
                let size = [8, 12, 16][si];
                let mut store = ParamStore::new();
                let stem = Stem::new(&mut store, &mut Initializer::new(seed), size, c, 6)?;
                randomize(&mut store, &mut r);
                let x = uniform(&mut r, &[s[0], size, size, c], 1.0);
                check_module(&store, vec![x], seed, |t, p, v| stem.forward(t, p, v[0]))?
            }
            "downsample" => {
                let mut store = ParamStore::new();
                let ds = Downsample::new(&mut store, &mut Initializer::new(seed), "ds", c, c + 3)?;
                randomize(&mut store, &mut r);
                let x = uniform(&mut r, &[s[0], 2 * s[1], 2 * s[2], c], 1.0);
                check_module(&store, vec![x], seed, |t, p, v| ds.forward(t, p, v[0]))?
            }
            "head" => {
                let mut store = ParamStore::new();
                let head = Head::new(&mut store, &mut Initializer::new(seed), c, 4)?;
                randomize(&mut store, &mut r);
                let x = uniform(&mut r, &[s[0], 1, 1, c], 1.0);
                check_module(&store, vec![x], seed, |t, p, v| head.forward(t, p, v[0]))?
            }
            "model" => {
                let batch = si + 1;
                let mut m = Model::<f64>::build(ModelConfig {
                    variant: VariantSpec::custom([1, 1, 1, 1], [8, 8, 8, 8]),
                    num_classes: 3,
                    input_size: 32,
                    seed,
                    ..ModelConfig::default()
                })?;
                randomize(&mut m.params, &mut r);
                let x = uniform(&mut r, &[batch, 32, 32, 3], 1.0);
                let shape = x.shape().to_vec();
                let rep = check_module(&m.params, vec![x], seed, |t, p, v| {
                    let mut rng = BlockRng::seed_from_u64(seed);
                    m.forward(t, p, v[0], false, &mut rng)
                })?;
                out.push((shape, rep, TOLERANCE));
                continue;
            }
            other => return Err(crate::Error::Config(format!("unknown gradcheck case {other:?}"))),
        };
        out.push((s.to_vec(), rep, TOLERANCE));
    }
    Ok(out)
}

/// Run the case named `filter`, or every case whose name contains it when
/// there is no exact match (all cases for `None` or "all").
pub fn run(filter: Option<&str>, seed: u64) -> Result<Vec<CaseResult>> {
    let filter = filter.filter(|f| *f != "all");
    let selected: Vec<&str> = match filter {
        Some(f) if CASES.contains(&f) => vec![f],
        _ => CASES
            .iter()
            .copied()
            .filter(|c| filter.is_none_or(|f| c.contains(f)))
            .collect(),
    };
    if selected.is_empty() {
        return Err(crate::Error::Config(format!(
            "no gradcheck case matches {:?}; known: {}",
            filter.unwrap_or(""),
            CASES.join(", ")
        )));
    }
    let mut results = Vec::new();
    for name in selected {
        for (shape, rep, tolerance) in case(name, seed)? {
            results.push(CaseResult {
                name: name.to_string(),
                shape,
                max_rel_error: rep.max_rel_error(),
                coords_checked: rep.inputs.iter().map(|i| i.coords_checked).sum(),
                tolerance,
            });
        }
    }
    Ok(results)
}
