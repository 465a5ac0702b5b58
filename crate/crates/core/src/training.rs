//! Training loop, evaluation and the paired Fourier-gate ablation.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::blocks::BlockRng;
use crate::checkpoint::{archive_state, Archive};
use crate::data::{augment, synth_generate, AugmentConfig, Batches, Split, SplitData, SynthSpec};
use crate::error::{Error, Result};
use crate::metrics::{argmax_rows, Metrics};
use crate::model::{Model, ModelConfig};
use crate::ops;
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;

pub const BEST_CHECKPOINT: &str = "best.mors";
pub const LAST_CHECKPOINT: &str = "last.mors";
pub const HISTORY_FILE: &str = "history.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: AdamConfig,
    pub lr_schedule: LrSchedule,
    /// Global gradient-norm clip; off when absent.
    pub grad_clip: Option<f64>,
    /// Stop after this many optimizer steps even mid-epoch.
    pub max_steps: Option<u64>,
    pub augment: AugmentConfig,
    pub seed: u64,
    /// Validate every this many epochs (the final epoch is always validated).
    pub eval_every: usize,
    /// Leave the best-validation parameters in the model when training ends.
    pub restore_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            batch_size: 32,
            optim: AdamConfig::default(),
            lr_schedule: LrSchedule::Constant,
            grad_clip: None,
            max_steps: None,
            augment: AugmentConfig::default(),
            seed: 0,
            eval_every: 1,
            restore_best: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("epochs, batch_size and eval_every must be >= 1".into()));
        }
        if !(self.optim.lr >= 0.0 && self.optim.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be >= 0", self.optim.lr)));
        }
        if let Some(c) = self.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!("grad_clip {c} must be > 0")));
            }
        }
        self.augment.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_macro_f1: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub steps: u64,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
}

/// Independent RNG streams derived from one seed.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

fn lr_at(cfg: &TrainConfig, step: u64, total: u64) -> f64 {
    match cfg.lr_schedule {
        LrSchedule::Constant => cfg.optim.lr,
        LrSchedule::Cosine => {
            let t = step as f64 / total.max(1) as f64;
            cfg.optim.lr * 0.5 * (1.0 + (std::f64::consts::PI * t.min(1.0)).cos())
        }
    }
}

fn clip_grads(grads: &mut [Tensor<f32>], max_norm: f64) {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        for g in grads {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Eval-mode metrics and mean loss over a split. Never touches parameters.
pub fn evaluate(model: &Model<f32>, data: &SplitData, batch_size: usize) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let k = model.num_classes();
    if data.num_classes != k {
        return Err(Error::Data(format!(
            "dataset has {} classes, model predicts {k}",
            data.num_classes
        )));
    }
    let mut predicted = Vec::with_capacity(data.len());
    let mut loss_sum = 0.0;
    for idx in Batches::new(data.len(), batch_size, None) {
        let (x, y) = data.batch::<f32>(&idx);
        let logits = model.predict(&x)?;
        let tape = Tape::no_grad();
        let z = tape.constant(logits.clone());
        let l = ops::softmax_cross_entropy(&tape, z, &y)?;
        loss_sum += tape.value(l).data()[0] as f64 * idx.len() as f64;
        let wide: Vec<f64> = logits.data().iter().map(|&v| v as f64).collect();
        predicted.extend(argmax_rows(&wide, k));
    }
    let mut m = Metrics::from_predictions(k, &data.labels, &predicted)?;
    m.loss = Some(loss_sum / data.len() as f64);
    Ok(m)
}

fn save_state(dir: &Path, name: &str, model: &Model<f32>, opt: &Adam<f32>) -> Result<()> {
    archive_state(&model.params, Some(opt))?.save(dir.join(name))
}

/// Train with Adam on `train`, validating on `val`. With an output directory
/// the per-epoch history, the best-validation checkpoint and the latest
/// checkpoint are written there. A non-finite loss or gradient aborts with
/// [`Error::Numerical`]; checkpoints already on disk are left intact.
pub fn train(
    model: &mut Model<f32>,
    train: &SplitData,
    val: &SplitData,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("training needs non-empty train and val splits".into()));
    }
    if train.num_classes != model.num_classes() {
        return Err(Error::Data(format!(
            "dataset has {} classes, model predicts {}",
            train.num_classes,
            model.num_classes()
        )));
    }
    let mut history_file = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join(HISTORY_FILE);
            Some((std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?, p))
        }
        None => None,
    };

    let mut order_rng = stream(cfg.seed, 1);
    let mut aug_rng = stream(cfg.seed, 2);
    let mut drop_rng: BlockRng = stream(cfg.seed, 3);
    let mut opt = Adam::new(cfg.optim, &model.params);
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size) as u64;
    let total_steps = cfg
        .max_steps
        .unwrap_or(u64::MAX)
        .min(steps_per_epoch * cfg.epochs as u64);

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, crate::param::ParamStore<f32>)> = None;
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for idx in Batches::new(train.len(), cfg.batch_size, Some(&mut order_rng)) {
            if step >= total_steps {
                break;
            }
            let (mut x, mut y) = train.batch::<f32>(&idx);
            if !cfg.augment.is_identity() {
                augment(&mut x, &mut y, &cfg.augment, &mut aug_rng)?;
            }
            let (loss, mut grads) = model.loss_and_grads(&x, &y, true, &mut drop_rng)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "loss became {loss} at step {} (epoch {epoch})",
                    step + 1
                )));
            }
            if let Some(c) = cfg.grad_clip {
                clip_grads(&mut grads, c);
            }
            opt.config.lr = lr_at(cfg, step, total_steps);
            opt.step(&mut model.params, &grads)?;
            step += 1;
            loss_sum += loss * idx.len() as f64;
            seen += idx.len();
        }
        let stopping = step >= total_steps || epoch == cfg.epochs;
        let (val_loss, val_f1) = if epoch % cfg.eval_every == 0 || stopping {
            let m = evaluate(model, val, cfg.batch_size)?;
            (m.loss, Some(m.macro_f1))
        } else {
            (None, None)
        };
        let record = EpochRecord {
            epoch,
            train_loss: if seen > 0 { loss_sum / seen as f64 } else { f64::NAN },
            val_loss,
            val_macro_f1: val_f1,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train_loss {:.5} val_loss {:?} val_macro_f1 {:?}",
            record.train_loss,
            record.val_loss,
            record.val_macro_f1
        );
        if let Some(vl) = val_loss {
            if best.as_ref().is_none_or(|b| vl < b.0) {
                best = Some((vl, epoch, model.params.clone()));
                if let Some(dir) = out_dir {
                    save_state(dir, BEST_CHECKPOINT, model, &opt)?;
                }
            }
        }
        if let Some(dir) = out_dir {
            save_state(dir, LAST_CHECKPOINT, model, &opt)?;
        }
        if let Some((f, p)) = history_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&record)?).map_err(|e| Error::io(p.as_path(), e))?;
        }
        history.push(record);
        if step >= total_steps {
            break;
        }
    }
    let (best_val_loss, best_epoch) = match best {
        Some((loss, epoch, params)) => {
            if cfg.restore_best {
                model.params = params;
            }
            (Some(loss), Some(epoch))
        }
        None => (None, None),
    };
    Ok(TrainReport {
        history,
        steps: step,
        best_epoch,
        best_val_loss,
    })
}

/// Read a history file back.
pub fn read_history(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Load parameters saved by [`train`] into `model`.
pub fn load_checkpoint(model: &mut Model<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let archive = Archive::load(path)?;
    crate::checkpoint::restore_state(&archive, &mut model.params, None).map_err(|detail| Error::Format {
        path: path.to_path_buf(),
        detail,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: SynthSpec,
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: SynthSpec::default(),
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub macro_f1: f64,
    pub accuracy: f64,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSeed {
    pub seed: u64,
    pub with_fgb: ArmResult,
    pub without_fgb: ArmResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub runs: Vec<AblationSeed>,
    pub mean_f1_with_fgb: f64,
    pub mean_f1_without_fgb: f64,
}

/// For every seed, train the model as configured and a copy whose Fourier
/// stages are replaced by gated CNN blocks of the same depth and width. Both
/// arms see the same data in the same order; test macro-F1 is reported.
pub fn ablation_run(cfg: &AblationConfig, workdir: impl AsRef<Path>) -> Result<AblationReport> {
    if cfg.seeds.len() < 3 {
        return Err(Error::Config(format!(
            "ablation needs >= 3 seeds, got {}",
            cfg.seeds.len()
        )));
    }
    let data_dir: PathBuf = workdir.as_ref().join("data");
    let manifest = synth_generate(&cfg.data, &data_dir)?;
    let train_set = SplitData::load(&manifest, Split::Train)?;
    let val_set = SplitData::load(&manifest, Split::Val)?;
    let test_set = SplitData::load(&manifest, Split::Test)?;
    let model_cfg = ModelConfig {
        num_classes: manifest.num_classes(),
        in_channels: cfg.data.channels,
        input_size: cfg.data.size,
        ..cfg.model.clone()
    };

    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let arm = |fourier: bool| -> Result<ArmResult> {
            let mut model = Model::<f32>::build(ModelConfig {
                seed,
                fourier_stages: fourier,
                ..model_cfg.clone()
            })?;
            let tcfg = TrainConfig {
                seed,
                restore_best: true,
                ..cfg.train.clone()
            };
            train(&mut model, &train_set, &val_set, &tcfg, None)?;
            let m = evaluate(&model, &test_set, tcfg.batch_size)?;
            Ok(ArmResult {
                macro_f1: m.macro_f1,
                accuracy: m.accuracy,
                params: model.count_params(),
            })
        };
        let with_fgb = arm(true)?;
        let without_fgb = arm(false)?;
        log::info!(
            "seed {seed}: macro-F1 with FGB {:.4}, without {:.4}",
            with_fgb.macro_f1,
            without_fgb.macro_f1
        );
        runs.push(AblationSeed {
            seed,
            with_fgb,
            without_fgb,
        });
    }
    let mean = |f: &dyn Fn(&AblationSeed) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    Ok(AblationReport {
        mean_f1_with_fgb: mean(&|r| r.with_fgb.macro_f1),
        mean_f1_without_fgb: mean(&|r| r.without_fgb.macro_f1),
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VariantSpec;

    fn micro() -> Model<f32> {
        Model::build(ModelConfig {
            variant: VariantSpec::custom([1, 1, 1, 1], [8, 8, 8, 8]),
            num_classes: 2,
            input_size: 32,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    fn toy(n: usize, seed: u64) -> SplitData {
        let mut r = stream(seed, 0);
        let images = Tensor::from_fn([n, 32, 32, 3], |_| rand::Rng::random::<f32>(&mut r));
        SplitData::new(images, (0..n).map(|i| i % 2).collect(), 2).unwrap()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_lr_changes_nothing() {
        let mut m = micro();
        let before = m.params.fingerprint();
        let cfg = TrainConfig {
            epochs: 1,
            optim: AdamConfig {
                lr: 0.0,
                ..AdamConfig::default()
            },
            ..quick()
        };
        train(&mut m, &toy(8, 0), &toy(4, 1), &cfg, None).unwrap();
        assert_eq!(m.params.fingerprint(), before);
    }

    #[test]
    fn evaluation_leaves_params_alone() {
        let m = micro();
        let before = m.params.fingerprint();
        let metrics = evaluate(&m, &toy(6, 2), 4).unwrap();
        assert_eq!(m.params.fingerprint(), before);
        assert_eq!(metrics.confusion.iter().flatten().sum::<u64>(), 6);
    }

    #[test]
    fn history_and_checkpoints_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = micro();
        let report = train(&mut m, &toy(8, 0), &toy(4, 1), &quick(), Some(dir.path())).unwrap();
        assert_eq!(report.steps, 4);
        let hist = read_history(dir.path().join(HISTORY_FILE)).unwrap();
        assert_eq!(hist.len(), 2);
        assert!(dir.path().join(BEST_CHECKPOINT).exists() && dir.path().join(LAST_CHECKPOINT).exists());
    }

    #[test]
    fn max_steps_cuts_training_short() {
        let mut m = micro();
        let cfg = TrainConfig {
            max_steps: Some(3),
            ..quick()
        };
        let report = train(&mut m, &toy(8, 0), &toy(4, 1), &cfg, None).unwrap();
        assert_eq!(report.steps, 3);
        assert_eq!(report.history.len(), 2);
    }

    #[test]
    fn cosine_schedule_ends_at_zero() {
        let cfg = TrainConfig {
            lr_schedule: LrSchedule::Cosine,
            ..TrainConfig::default()
        };
        assert_eq!(lr_at(&cfg, 0, 10), 1e-3);
        assert!(lr_at(&cfg, 10, 10).abs() < 1e-18);
    }

    #[test]
    fn too_few_ablation_seeds_rejected() {
        let cfg = AblationConfig {
            seeds: vec![0, 1],
            ..AblationConfig::default()
        };
        assert!(matches!(ablation_run(&cfg, "/nonexistent"), Err(Error::Config(_))));
    }
}
