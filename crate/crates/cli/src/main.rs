use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mors::data::{scan_dataset, synth_generate, Manifest, Split, SplitData, SynthSpec};
use mors::model::{Model, ModelConfig, VariantSpec};
use mors::training::{self, AblationConfig};
use mors::{Error, Result};
use serde::Serialize;
use serde_json::json;

mod config;
mod gates;

use config::{io_err, resolve, write_effective, DataConfig, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "mors", version, about = "Gated CNN + Fourier filter gate backbone")]
struct Cli {
    /// More log output on stderr (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Count learnable parameters of a preset.
    Params { variant: String },
    /// Per-stage architecture summary of a preset.
    Describe {
        variant: String,
        #[arg(long, default_value_t = 224)]
        input_size: usize,
        #[arg(long, default_value_t = 21)]
        num_classes: usize,
    },
    /// Finite-difference check of every op and block, or one of them.
    Gradcheck {
        #[arg(default_value = "all")]
        scope: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate the frequency-separable synthetic dataset.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Paired with/without-FGB runs over several seeds.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Dump sigmoid(w) of every Fourier filter gate.
    ExportGate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn exit_class(e: &Error) -> (&'static str, u8) {
    match e {
        Error::Config(_) | Error::Usage(_) | Error::Json(_) => ("config", 2),
        Error::Data(_) | Error::Io { .. } | Error::Format { .. } | Error::Validation(_) | Error::Dimension { .. } => {
            ("data", 3)
        }
        Error::Numerical(_) => ("numerical", 4),
    }
}

fn emit<S: Serialize>(value: &S) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("MORS_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("MORS_THREADS={raw:?} is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn load_manifest(data: &DataConfig) -> Result<Manifest> {
    match (&data.manifest, &data.root) {
        (Some(m), None) => Manifest::load(m),
        (None, Some(root)) => scan_dataset(root, data.ratios, data.seed),
        _ => Err(Error::Config("data needs exactly one of `manifest` or `root`".into())),
    }
}

/// Absolute data paths so the echoed config reloads from anywhere.
fn absolutize(data: &mut DataConfig) -> Result<()> {
    for p in [&mut data.manifest, &mut data.root].into_iter().flatten() {
        *p = std::path::absolute(&*p).map_err(|e| io_err(p, e))?;
    }
    Ok(())
}

/// Classes, channels and input size come from the data, not the config.
fn fit_to_data(model: &mut ModelConfig, manifest: &Manifest, sample: &SplitData) -> Result<()> {
    let [_, h, w, c] = sample.images.shape()[..] else {
        return Err(Error::Data("image batch is not rank 4".into()));
    };
    if h != w {
        return Err(Error::Data(format!("images are {h}x{w}; square inputs are required")));
    }
    let fitted = (manifest.num_classes(), c, h);
    if (model.num_classes, model.in_channels, model.input_size) != fitted {
        log::info!(
            "model fitted to data: {} classes, {} channels, {}px input",
            fitted.0,
            fitted.1,
            fitted.2
        );
    }
    (model.num_classes, model.in_channels, model.input_size) = fitted;
    Ok(())
}

/// Resolve a run config, load the requested split and build a matching model.
fn prepare(
    path: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
    split: Split,
) -> Result<(RunConfig, Manifest, SplitData)> {
    let mut cfg: RunConfig = resolve(path, overrides)?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    absolutize(&mut cfg.data)?;
    cfg.train.validate()?;
    let manifest = load_manifest(&cfg.data)?;
    let data = SplitData::load(&manifest, split)?;
    if data.is_empty() {
        return Err(Error::Data(format!("the {split:?} split is empty")));
    }
    fit_to_data(&mut cfg.model, &manifest, &data)?;
    Ok((cfg, manifest, data))
}

fn summary_for(variant: &str, input_size: usize, num_classes: usize) -> Result<mors::model::ModelSummary> {
    let cfg = ModelConfig {
        input_size,
        ..ModelConfig::new(VariantSpec::by_name(variant)?, num_classes)
    };
    Ok(Model::<f32>::build(cfg)?.describe())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Params { variant } => {
            let s = summary_for(&variant, 224, ModelConfig::default().num_classes)?;
            emit(&json!({"variant": s.variant, "params": s.total_params}))
        }
        Command::Describe {
            variant,
            input_size,
            num_classes,
        } => emit(&summary_for(&variant, input_size, num_classes)?),
        Command::Gradcheck { scope, seed } => {
            let results = mors::gradsuite::run(Some(&scope), seed)?;
            eprintln!(
                "{:<24} {:<16} {:>12} {:>10} {:>6}",
                "case", "shape", "max rel err", "tol", "ok"
            );
            for r in &results {
                eprintln!(
                    "{:<24} {:<16} {:>12.3e} {:>10.0e} {:>6}",
                    r.name,
                    format!("{:?}", r.shape),
                    r.max_rel_error,
                    r.tolerance,
                    if r.passed() { "pass" } else { "FAIL" }
                );
            }
            let failed: Vec<&str> = results
                .iter()
                .filter(|r| !r.passed())
                .map(|r| r.name.as_str())
                .collect();
            emit(&json!({"scope": scope, "passed": failed.is_empty(), "cases": results}))?;
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Error::Numerical(format!(
                    "gradient check failed for {}",
                    failed.join(", ")
                )))
            }
        }
        Command::Synth {
            config,
            out,
            overrides,
            seed,
        } => {
            let mut spec: SynthSpec = resolve(config.as_deref(), &overrides)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let manifest = synth_generate(&spec, &out)?;
            let counts: Vec<usize> = Split::ALL.iter().map(|&s| manifest.count(s)).collect();
            emit(&json!({
                "out": out,
                "classes": manifest.num_classes(),
                "train": counts[0],
                "val": counts[1],
                "test": counts[2],
            }))
        }
        Command::Train {
            config,
            out,
            overrides,
            seed,
        } => {
            let (cfg, manifest, train_set) = prepare(config.as_deref(), &overrides, seed, Split::Train)?;
            let val_set = SplitData::load(&manifest, Split::Val)?;
            write_effective(&out, &cfg)?;
            let mut model = Model::<f32>::build(cfg.model.clone())?;
            log::info!(
                "training {} ({} params) on {} samples, validating on {}",
                model.cfg.variant.name,
                model.count_params(),
                train_set.len(),
                val_set.len()
            );
            let report = training::train(&mut model, &train_set, &val_set, &cfg.train, Some(&out))?;
            let val = if val_set.is_empty() {
                None
            } else {
                Some(training::evaluate(&model, &val_set, cfg.train.batch_size)?)
            };
            emit(&json!({
                "out": out,
                "params": model.count_params(),
                "steps": report.steps,
                "best_epoch": report.best_epoch,
                "best_val_loss": report.best_val_loss,
                "history": report.history,
                "val": val,
            }))
        }
        Command::Eval {
            config,
            checkpoint,
            split,
            overrides,
        } => {
            let split = Split::parse(&split).map_err(|e| Error::Config(e.to_string()))?;
            let (cfg, _, data) = prepare(config.as_deref(), &overrides, None, split)?;
            let mut model = Model::<f32>::build(cfg.model)?;
            training::load_checkpoint(&mut model, &checkpoint)?;
            let metrics = training::evaluate(&model, &data, cfg.train.batch_size)?;
            if !metrics.absent_classes.is_empty() {
                log::warn!("classes with no samples in this split: {:?}", metrics.absent_classes);
            }
            emit(&json!({"checkpoint": checkpoint, "split": split, "metrics": metrics}))
        }
        Command::Ablate { config, out, overrides } => {
            let cfg: AblationConfig = resolve(config.as_deref(), &overrides)?;
            write_effective(&out, &cfg)?;
            let report = training::ablation_run(&cfg, &out)?;
            let path = out.join("report.json");
            std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n").map_err(|e| io_err(&path, e))?;
            emit(&report)
        }
        Command::ExportGate {
            config,
            checkpoint,
            out,
            overrides,
        } => {
            let (cfg, _, _) = prepare(config.as_deref(), &overrides, None, Split::Train)?;
            let mut model = Model::<f32>::build(cfg.model)?;
            training::load_checkpoint(&mut model, &checkpoint)?;
            emit(&gates::export(&model, &out)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "error",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (class, code) = exit_class(&e);
            eprintln!("{}", json!({"error": class, "exit": code, "reason": e.to_string()}));
            ExitCode::from(code)
        }
    }
}
