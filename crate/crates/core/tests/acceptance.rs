//! Acceptance criteria 1-10. Prints one line per criterion and exits non-zero
//! if any fails. Pass criterion numbers as arguments to run a subset:
//! `cargo test --test acceptance -- 1 2 6`.

use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use mors::blocks::{BlockRng, FgbCfg, FourierGateBlock, GatedCnnBlock, GatedCnnBlockCfg};
use mors::checkpoint::Archive;
use mors::data::{synth_generate, Batches, Split, SplitData, SynthSpec};
use mors::init::Initializer;
use mors::metrics::{argmax_rows, Metrics};
use mors::model::{Model, ModelConfig, StageKind, VariantSpec};
use mors::optim::{Adam, AdamConfig};
use mors::param::ParamStore;
use mors::spectral::{irfft2, rfft2, FourierFilterGate, GateSource};
use mors::training::{self, AblationConfig, TrainConfig};
use mors::{Tape, Tensor};
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn rng(seed: u64) -> BlockRng {
    BlockRng::seed_from_u64(seed)
}

fn rand_tensor(r: &mut BlockRng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| r.random_range(-1.0..1.0))
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Direct 2D DFT of one real plane, orthonormal, half spectrum `[H, W/2+1]`.
fn dft2_oracle(plane: &[f64], h: usize, w: usize) -> Vec<(f64, f64)> {
    let wf = w / 2 + 1;
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut out = Vec::with_capacity(h * wf);
    for u in 0..h {
        for k in 0..wf {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    // Reduce the phase exactly in integers before scaling.
                    let t = ((u * y) % h) as f64 / h as f64 + ((k * x) % w) as f64 / w as f64;
                    let (s, c) = (-2.0 * PI * t).sin_cos();
                    let v = plane[y * w + x];
                    re += v * c;
                    im += v * s;
                }
            }
            out.push((re * scale, im * scale));
        }
    }
    out
}

fn c1_fft_oracle() -> Outcome {
    const SIZES: [usize; 5] = [7, 8, 14, 28, 56];
    let mut r = rng(1);
    let (mut worst_dft, mut worst_rt) = (0.0f64, 0.0f64);
    for &h in &SIZES {
        for &w in &SIZES {
            let x = rand_tensor(&mut r, &[1, h, w, 2]);
            let spec = rfft2(&x).map_err(err)?;
            for c in 0..2 {
                let plane: Vec<f64> = (0..h * w).map(|i| x.data()[i * 2 + c]).collect();
                let oracle = dft2_oracle(&plane, h, w);
                for (got, want) in spec.plane(0, c).iter().zip(&oracle) {
                    worst_dft = worst_dft.max((got.re - want.0).abs()).max((got.im - want.1).abs());
                }
            }
            let back = irfft2(&spec, h, w).map_err(err)?;
            worst_rt = worst_rt.max(back.max_abs_diff(&x));
        }
    }
    check(
        worst_dft <= 1e-10 && worst_rt <= 1e-10,
        format!("25 sizes, max |rfft2 - DFT| {worst_dft:.2e}, max round trip {worst_rt:.2e} (tol 1e-10)"),
    )
}

fn c2_ffg_exactness() -> Outcome {
    let mut r = rng(2);
    let (mut pass_err, mut stop_err, mut dc_err, mut half_err) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (h, w, c) in [(7, 7, 3), (8, 8, 4), (14, 14, 2), (6, 5, 3), (28, 28, 2)] {
        let gate = FourierFilterGate::<f64>::new(c, h, w).map_err(err)?;
        let x = rand_tensor(&mut r, &[2, h, w, c]);
        let apply = |mask: &Tensor<f64>| -> Result<Tensor<f64>, String> {
            let tape = Tape::new();
            let y = gate
                .forward(&tape, tape.constant(x.clone()), GateSource::Override(mask))
                .map_err(err)?;
            Ok((*tape.value(y)).clone())
        };
        pass_err = pass_err.max(apply(&Tensor::ones(gate.mask_shape()))?.max_abs_diff(&x));
        let stopped = apply(&Tensor::zeros(gate.mask_shape()))?;
        stop_err = stop_err.max(stopped.data().iter().fold(0.0, |m, v| m.max(v.abs())));

        let wf = w / 2 + 1;
        let mut dc = Tensor::zeros(gate.mask_shape());
        for ch in 0..c {
            dc.data_mut()[ch * h * wf] = 1.0;
        }
        let y = apply(&dc)?;
        for b in 0..2 {
            for ch in 0..c {
                let mean = (0..h * w).map(|i| x.data()[(b * h * w + i) * c + ch]).sum::<f64>() / (h * w) as f64;
                for i in 0..h * w {
                    dc_err = dc_err.max((y.data()[(b * h * w + i) * c + ch] - mean).abs());
                }
            }
        }

        let tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(gate.mask_shape()));
        let y = gate
            .forward(&tape, tape.constant(x.clone()), GateSource::Logits(logits))
            .map_err(err)?;
        half_err = half_err.max(tape.value(y).max_abs_diff(&x.map(|v| v / 2.0)));
    }
    check(
        pass_err <= 1e-10 && stop_err == 0.0 && dc_err <= 1e-10 && half_err <= 1e-12,
        format!(
            "mask 1: {pass_err:.2e}, mask 0: {stop_err:.1e}, DC-only vs mean field: {dc_err:.2e}, w=0 vs x/2: {half_err:.2e}"
        ),
    )
}

fn c3_gradient_suite() -> Outcome {
    let results = mors::gradsuite::run(Some("all"), 0).map_err(err)?;
    let mut failed = Vec::new();
    let mut worst = 0.0f64;
    for &case in mors::gradsuite::CASES {
        let rows: Vec<_> = results.iter().filter(|r| r.name == case).collect();
        let shapes = rows.len();
        let ok = shapes >= 3 && rows.iter().all(|r| r.passed());
        worst = rows.iter().fold(worst, |m, r| m.max(r.max_rel_error));
        if !ok {
            failed.push(format!("{case} ({shapes} shapes)"));
        }
    }
    check(
        failed.is_empty(),
        format!(
            "{} cases x >=3 shapes, worst rel error {worst:.2e} (tol 1e-6){}",
            mors::gradsuite::CASES.len(),
            if failed.is_empty() {
                String::new()
            } else {
                format!("; failed: {}", failed.join(", "))
            }
        ),
    )
}

fn c4_architecture() -> Outcome {
    let table = [
        ("femto", [3, 3, 9, 3], [48, 96, 192, 288]),
        ("kobe", [3, 3, 15, 3], [48, 96, 192, 288]),
        ("tiny", [3, 3, 9, 3], [96, 192, 384, 576]),
    ];
    let mut problems = Vec::new();
    for (name, depths, dims) in table {
        let cfg = ModelConfig::new(VariantSpec::by_name(name).map_err(err)?, 21);
        let s = Model::<f32>::build(cfg).map_err(err)?.describe();
        let kinds: Vec<StageKind> = s.stages.iter().map(|st| st.kind).collect();
        let res: Vec<[usize; 2]> = s.stages.iter().map(|st| st.resolution).collect();
        if s.depths != depths || s.dims != dims {
            problems.push(format!("{name}: depths {:?} dims {:?}", s.depths, s.dims));
        }
        if kinds
            != [
                StageKind::GatedCnn,
                StageKind::Fourier,
                StageKind::Fourier,
                StageKind::GatedCnn,
            ]
        {
            problems.push(format!("{name}: kinds {kinds:?}"));
        }
        if res != [[56, 56], [28, 28], [14, 14], [7, 7]] {
            problems.push(format!("{name}: resolutions {res:?}"));
        }
        let blocks: Vec<usize> = s.stages.iter().map(|st| st.blocks).collect();
        if blocks != depths {
            problems.push(format!("{name}: built blocks {blocks:?}"));
        }
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            "femto/kobe/tiny depths, dims, kinds [GatedCNN, FGB, FGB, GatedCNN], ladder 56/28/14/7 exact".into()
        } else {
            problems.join("; ")
        },
    )
}

fn c5_param_counts() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, target) in [("femto", 6.1e6), ("kobe", 8.0e6), ("tiny", 24.0e6)] {
        let cfg = ModelConfig::new(VariantSpec::by_name(name).map_err(err)?, 21);
        let s = Model::<f32>::build(cfg).map_err(err)?.describe();
        let dev = s.total_params as f64 / target - 1.0;
        ok &= dev.abs() <= 0.15;
        let stages: Vec<String> = s
            .stages
            .iter()
            .map(|st| format!("{:.2}M", st.params as f64 / 1e6))
            .collect();
        lines.push(format!(
            "{name} {:.2}M ({:+.1}%: stem {:.3}M, stages [{}], norm+head {:.3}M)",
            s.total_params as f64 / 1e6,
            dev * 100.0,
            s.stem_params as f64 / 1e6,
            stages.join(", "),
            s.head_params as f64 / 1e6
        ));
    }
    check(ok, lines.join("; "))
}

fn c6_residual_identity() -> Outcome {
    let mut r = rng(6);
    let mut worst = 0.0f64;
    for (dim, hw, seed) in [(8, 5, 1u64), (12, 7, 2), (16, 4, 3)] {
        let x = rand_tensor(&mut r, &[2, hw, hw, dim]);

        let mut store = ParamStore::<f64>::new();
        let mut init = Initializer::new(seed);
        let g = GatedCnnBlock::new(&mut store, &mut init, "g", GatedCnnBlockCfg::new(dim)).map_err(err)?;
        store
            .set(g.fc2.weight, Tensor::zeros([g.cfg.hidden(), dim]))
            .map_err(err)?;
        let tape = Tape::new();
        let p = store.bind(&tape);
        let y = g.forward(&tape, &p, tape.constant(x.clone())).map_err(err)?;
        let y = tape.value(y);
        if y.shape() != x.shape() {
            return Err(format!("gated CNN block changed shape to {:?}", y.shape()));
        }
        worst = worst.max(y.max_abs_diff(&x));

        let mut store = ParamStore::<f64>::new();
        let mut init = Initializer::new(seed);
        let mut f = FourierGateBlock::new(&mut store, &mut init, "f", FgbCfg::new(dim, hw, hw)).map_err(err)?;
        f.set_gate_override(Some(Tensor::zeros(f.gate.mask_shape())))
            .map_err(err)?;
        store
            .set(f.fc2.weight, Tensor::zeros([f.cfg.mlp_hidden(), dim]))
            .map_err(err)?;
        for training in [false, true] {
            let tape = Tape::new();
            let p = store.bind(&tape);
            let y = f
                .forward(&tape, &p, tape.constant(x.clone()), training, &mut rng(seed))
                .map_err(err)?;
            let y = tape.value(y);
            if y.shape() != x.shape() {
                return Err(format!("Fourier gate block changed shape to {:?}", y.shape()));
            }
            worst = worst.max(y.max_abs_diff(&x));
        }
    }
    check(
        worst <= 1e-12,
        format!("gated CNN (fc2 = 0) and FGB (mask 0, mlp.fc2 = 0) on 3 shapes: max |y - x| {worst:.1e} (tol 1e-12)"),
    )
}

fn c7_overfit() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let spec = SynthSpec {
        classes: 4,
        samples_per_class: 16,
        size: 32,
        ratios: [1.0, 0.0, 0.0],
        ..SynthSpec::default()
    };
    let manifest = synth_generate(&spec, dir.path()).map_err(err)?;
    let data = SplitData::load(&manifest, Split::Train).map_err(err)?;
    let cfg = ModelConfig {
        variant: VariantSpec::custom([1, 1, 1, 1], [16, 16, 32, 32]),
        num_classes: 4,
        input_size: 32,
        ..ModelConfig::default()
    };
    let mut model = Model::<f32>::build(cfg).map_err(err)?;
    let mut opt = Adam::new(AdamConfig::default(), &model.params);
    let (mut order, mut drop) = (rng(70), rng(71));
    let mut step = 0;
    while step < 300 {
        for idx in Batches::new(data.len(), 16, Some(&mut order)) {
            let (x, y) = data.batch::<f32>(&idx);
            let (_, grads) = model.loss_and_grads(&x, &y, true, &mut drop).map_err(err)?;
            opt.step(&mut model.params, &grads).map_err(err)?;
            step += 1;
        }
        let acc = training::evaluate(&model, &data, 64).map_err(err)?.accuracy;
        if acc == 1.0 {
            return Ok(format!(
                "{} samples, 100% train accuracy after {step} steps (limit 300)",
                data.len()
            ));
        }
    }
    let acc = training::evaluate(&model, &data, 64).map_err(err)?.accuracy;
    Err(format!("train accuracy {:.1}% after {step} steps", acc * 100.0))
}

/// Femto-scaled micro config: a third of femto's depth, a sixth of its
/// width. Weight std is raised so std·sqrt(width) matches femto at 0.02.
fn ablation_config() -> AblationConfig {
    let per_class = 224;
    AblationConfig {
        model: ModelConfig {
            variant: VariantSpec::custom([1, 1, 3, 1], [8, 16, 32, 48]),
            init_std: 0.05,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            epochs: 25,
            batch_size: 32,
            ..TrainConfig::default()
        },
        data: SynthSpec {
            classes: 4,
            samples_per_class: per_class,
            size: 64,
            noise: 0.1,
            ratios: [128.0 / 224.0, 32.0 / 224.0, 64.0 / 224.0],
            ..SynthSpec::default()
        },
        seeds: vec![0, 1, 2, 3, 4],
    }
}

fn c8_ablation() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let report = training::ablation_run(&ablation_config(), dir.path()).map_err(err)?;
    let per_seed: Vec<String> = report
        .runs
        .iter()
        .map(|r| format!("{}: {:.3}/{:.3}", r.seed, r.with_fgb.macro_f1, r.without_fgb.macro_f1))
        .collect();
    check(
        report.mean_f1_with_fgb >= report.mean_f1_without_fgb,
        format!(
            "mean test macro-F1 with FGB {:.4}, without {:.4} (per seed with/without: {})",
            report.mean_f1_with_fgb,
            report.mean_f1_without_fgb,
            per_seed.join(", ")
        ),
    )
}

fn history_without_timing(path: &Path) -> Result<String, String> {
    let mut h = training::read_history(path).map_err(err)?;
    for r in &mut h {
        r.seconds = 0.0;
    }
    serde_json::to_string(&h).map_err(err)
}

fn c9_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let spec = SynthSpec {
        classes: 3,
        samples_per_class: 24,
        size: 32,
        ratios: [0.5, 0.25, 0.25],
        seed: 9,
        ..SynthSpec::default()
    };
    let manifest = synth_generate(&spec, dir.path().join("data")).map_err(err)?;
    let train_set = SplitData::load(&manifest, Split::Train).map_err(err)?;
    let val_set = SplitData::load(&manifest, Split::Val).map_err(err)?;
    let mcfg = ModelConfig {
        variant: VariantSpec::custom([1, 1, 1, 1], [8, 8, 16, 16]),
        num_classes: 3,
        input_size: 32,
        droppath: 0.1,
        seed: 9,
        ..ModelConfig::default()
    };
    let mut tcfg = TrainConfig {
        epochs: 3,
        batch_size: 8,
        seed: 9,
        ..TrainConfig::default()
    };
    tcfg.augment.hflip = 0.5;
    tcfg.augment.mixup_alpha = 0.2;

    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let mut model = Model::<f32>::build(mcfg.clone()).map_err(err)?;
        training::train(&mut model, &train_set, &val_set, &tcfg, Some(&out)).map_err(err)?;
        runs.push((out, model));
    }
    let ha = history_without_timing(&runs[0].0.join(training::HISTORY_FILE))?;
    let hb = history_without_timing(&runs[1].0.join(training::HISTORY_FILE))?;
    if ha != hb {
        return Err(format!("histories differ:\n{ha}\n{hb}"));
    }

    let best = runs[0].0.join(training::BEST_CHECKPOINT);
    let raw = std::fs::read(&best).map_err(err)?;
    if raw != std::fs::read(runs[1].0.join(training::BEST_CHECKPOINT)).map_err(err)? {
        return Err("best checkpoints of identical runs differ".into());
    }
    let reencoded = Archive::load(&best).map_err(err)?.to_bytes().map_err(err)?;
    if reencoded != raw {
        return Err("checkpoint load/save is not byte-identical".into());
    }
    let mut fresh = Model::<f32>::build(ModelConfig { seed: 1234, ..mcfg }).map_err(err)?;
    training::load_checkpoint(&mut fresh, &best).map_err(err)?;
    let trained = &runs[0].1.params;
    let identical = trained.iter().zip(fresh.params.iter()).all(|((_, a), (_, b))| {
        a.name == b.name
            && a.value
                .data()
                .iter()
                .zip(b.value.data())
                .all(|(x, y)| x.to_bits() == y.to_bits())
    });
    check(
        identical,
        format!(
            "{} epochs twice: identical loss histories and checkpoints; reload of {} bytes is bitwise",
            tcfg.epochs,
            raw.len()
        ),
    )
}

fn c10_metrics() -> Outcome {
    // confusion [[3, 1], [2, 4]] as logits: each row's argmax is the prediction.
    let truth = [0, 0, 0, 0, 1, 1, 1, 1, 1, 1];
    let pred = [0, 0, 0, 1, 0, 0, 1, 1, 1, 1];
    let logits: Vec<f64> = pred
        .iter()
        .flat_map(|&p| if p == 0 { [2.0, -1.0] } else { [-0.5, 0.5] })
        .collect();
    let m = Metrics::from_predictions(2, &truth, &argmax_rows(&logits, 2)).map_err(err)?;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-4;
    check(
        m.confusion == vec![vec![3, 1], vec![2, 4]]
            && close(m.precision[0], 0.6)
            && close(m.precision[1], 0.8)
            && close(m.recall[0], 0.75)
            && close(m.recall[1], 0.6667)
            && close(m.macro_f1, 0.697),
        format!(
            "P ({:.4}, {:.4}), R ({:.4}, {:.4}), macro-F1 {:.4}",
            m.precision[0], m.precision[1], m.recall[0], m.recall[1], m.macro_f1
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("FFT oracle equivalence", c1_fft_oracle),
        ("FFG exactness", c2_ffg_exactness),
        ("gradient suite", c3_gradient_suite),
        ("architecture conformance", c4_architecture),
        ("parameter counts", c5_param_counts),
        ("residual identity", c6_residual_identity),
        ("overfit sanity", c7_overfit),
        ("FGB ablation", c8_ablation),
        ("determinism", c9_determinism),
        ("metrics hand case", c10_metrics),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name} [{secs:.1}s]: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("criterion {n:>2} FAIL  {name} [{secs:.1}s]: {detail}");
            }
        }
    }
    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
}
