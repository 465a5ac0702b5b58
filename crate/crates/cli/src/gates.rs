//! Learned gate dumps: one MORS1 tensor `[C, H, Wf]` of `sigmoid(w)` per
//! Fourier filter gate, plus a CSV of the channel-mean gate per bin.

use std::path::{Path, PathBuf};

use mors::model::Model;
use mors::{mors1, Error, Result, Tensor};
use serde::Serialize;

use crate::config::io_err;

pub const CSV_FILE: &str = "gates.csv";

#[derive(Debug, Serialize)]
pub struct GateDump {
    pub block: String,
    pub shape: [usize; 3],
    pub file: PathBuf,
    pub mean_gate: f64,
}

#[derive(Debug, Serialize)]
pub struct GateExport {
    pub csv: PathBuf,
    pub gates: Vec<GateDump>,
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

pub fn export(model: &Model<f32>, out: &Path) -> Result<GateExport> {
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let csv_path = out.join(CSV_FILE);
    let csv_err = |e: csv::Error| Error::Data(format!("{}: {e}", csv_path.display()));
    let mut csv = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
    csv.write_record(["block", "h", "k", "mean_gate"]).map_err(csv_err)?;

    let mut gates = Vec::new();
    for block in model.fourier_blocks() {
        let name = model.params.name(block.gate_logits);
        let prefix = name.strip_suffix(".ffg.weight").unwrap_or(name).to_string();
        let [_, c, h, wf] = block.gate.mask_shape();
        let g = model.params.get(block.gate_logits).map(sigmoid).reshape([c, h, wf])?;
        let file = out.join(format!("{prefix}.gate.{}", mors::data::IMAGE_EXT));
        mors1::write_file(&file, &g)?;

        let mean = channel_mean(&g);
        for hi in 0..h {
            for k in 0..wf {
                csv.write_record([
                    prefix.clone(),
                    hi.to_string(),
                    k.to_string(),
                    mean[hi * wf + k].to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        gates.push(GateDump {
            block: prefix,
            shape: [c, h, wf],
            mean_gate: mean.iter().map(|&v| v as f64).sum::<f64>() / mean.len() as f64,
            file,
        });
    }
    csv.flush().map_err(|e| io_err(&csv_path, e))?;
    if gates.is_empty() {
        log::warn!("model has no Fourier filter gates; only the CSV header was written");
    }
    Ok(GateExport { csv: csv_path, gates })
}

/// Mean over the leading axis of `[C, H, Wf]`, flattened `[H·Wf]`.
fn channel_mean(g: &Tensor<f32>) -> Vec<f32> {
    let c = g.shape()[0];
    let plane = g.len() / c;
    let mut acc = vec![0.0f64; plane];
    for ch in g.data().chunks_exact(plane) {
        for (a, &v) in acc.iter_mut().zip(ch) {
            *a += v as f64;
        }
    }
    acc.into_iter().map(|a| (a / c as f64) as f32).collect()
}
