//! Run configuration: JSON file, then dotted `key=value` overrides, then
//! strict deserialization so a misspelt key is an error.

use std::path::{Path, PathBuf};

use mors::data::DEFAULT_RATIOS;
use mors::model::ModelConfig;
use mors::training::TrainConfig;
use mors::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const SCHEMA_VERSION: u32 = 1;
pub const EFFECTIVE_CONFIG: &str = "config.json";

pub fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// A manifest written by `synth` or an earlier scan.
    pub manifest: Option<PathBuf>,
    /// A directory of class folders to scan instead.
    pub root: Option<PathBuf>,
    #[serde(default = "default_ratios")]
    pub ratios: [f64; 3],
    #[serde(default)]
    pub seed: u64,
}

fn default_ratios() -> [f64; 3] {
    DEFAULT_RATIOS
}

/// Configuration for `train`, `eval` and `export-gate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    /// `--seed` reaches every stream: init, order, augmentation, droppath
    /// and the data split.
    pub fn set_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.train.seed = seed;
        self.data.seed = seed;
    }
}

/// Set `path` (dot separated) in `root` to `raw`, parsed as JSON when it
/// parses and kept as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override key {path:?} has an empty segment")));
    }
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        if !node.is_object() {
            return Err(Error::Config(format!("override {path:?} descends into a non-object")));
        }
        node = node
            .as_object_mut()
            .unwrap()
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    match node.as_object_mut() {
        Some(obj) => {
            obj.insert(keys[keys.len() - 1].to_string(), value);
            Ok(())
        }
        None => Err(Error::Config(format!("override {path:?} descends into a non-object"))),
    }
}

fn read_json(path: Option<&Path>) -> Result<Value> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
        None => Ok(Value::Object(Map::new())),
    }
}

/// Load, override and strictly parse a versioned config. A missing
/// `schema_version` is taken as the current one.
pub fn resolve<T: DeserializeOwned>(path: Option<&Path>, overrides: &[String]) -> Result<T> {
    let mut value = read_json(path)?;
    if !value.is_object() {
        return Err(Error::Config("config must be a JSON object".into()));
    }
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    match value.as_object_mut().unwrap().remove("schema_version") {
        None => {}
        Some(v) if v.as_u64() == Some(SCHEMA_VERSION as u64) => {}
        Some(v) => {
            return Err(Error::Config(format!(
                "unsupported schema_version {v}, expected {SCHEMA_VERSION}"
            )))
        }
    }
    serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
}

pub fn write_effective<T: Serialize>(dir: &Path, cfg: &T) -> Result<PathBuf> {
    let mut value = serde_json::to_value(cfg)?;
    if let Some(obj) = value.as_object_mut() {
        obj.insert("schema_version".into(), Value::from(SCHEMA_VERSION));
    }
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(EFFECTIVE_CONFIG);
    std::fs::write(&path, serde_json::to_string_pretty(&value)? + "\n").map_err(|e| io_err(&path, e))?;
    Ok(path)
}
