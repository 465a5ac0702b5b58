use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mors1;
use crate::tensor::Tensor;

pub const IMAGE_EXT: &str = "mors";
pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?} (train, val, test)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    /// Relative to the manifest root.
    pub path: PathBuf,
    pub label: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub classes: Vec<String>,
    pub samples: Vec<Sample>,
    pub seed: u64,
    pub ratios: [f64; 3],
    /// Directory sample paths are resolved against. Not serialized: it is
    /// the directory the manifest was loaded from.
    #[serde(skip)]
    pub root: PathBuf,
}

pub(crate) fn check_ratios(ratios: [f64; 3]) -> Result<()> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios {ratios:?} must be in [0,1] and sum to 1"
        )));
    }
    Ok(())
}

/// Per-class split sizes: floors for train and val, remainder to test.
pub(crate) fn split_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let floor = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
    let train = floor(ratios[0]).min(n);
    let val = floor(ratios[1]).min(n - train);
    [train, val, n - train - val]
}

/// Shuffle each class's items with one seeded stream and assign splits.
pub(crate) fn assign_splits(per_class: Vec<Vec<PathBuf>>, ratios: [f64; 3], seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    for (label, mut files) in per_class.into_iter().enumerate() {
        files.shuffle(&mut rng);
        let [train, val, _] = split_sizes(files.len(), ratios);
        for (i, path) in files.into_iter().enumerate() {
            let split = if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            };
            samples.push(Sample { path, label, split });
        }
    }
    samples
}

/// Build a manifest from `root/<class>/<file>.mors`. Classes are the sorted
/// subdirectory names; the split is stratified per class.
pub fn scan_dataset(root: impl AsRef<Path>, ratios: [f64; 3], seed: u64) -> Result<Manifest> {
    let root = root.as_ref();
    check_ratios(ratios)?;
    let read = |dir: &Path| -> Result<Vec<std::fs::DirEntry>> {
        std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .map(|e| e.map_err(|e| Error::io(dir, e)))
            .collect()
    };
    let mut classes: Vec<String> = read(root)?
        .into_iter()
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    classes.sort();
    if classes.is_empty() {
        return Err(Error::Data(format!("no class directories under {}", root.display())));
    }
    let mut per_class = Vec::with_capacity(classes.len());
    for class in &classes {
        let mut files: Vec<PathBuf> = read(&root.join(class))?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == IMAGE_EXT))
            .map(|p| Path::new(class).join(p.file_name().unwrap()))
            .collect();
        if files.is_empty() {
            return Err(Error::Data(format!("class {class:?} has no .{IMAGE_EXT} images")));
        }
        files.sort();
        per_class.push(files);
    }
    Ok(Manifest {
        classes,
        samples: assign_splits(per_class, ratios, seed),
        seed,
        ratios,
        root: root.to_path_buf(),
    })
}

impl Manifest {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| self.samples[i].split == split)
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.samples.iter().filter(|s| s.split == split).count()
    }

    pub fn path_of(&self, i: usize) -> PathBuf {
        self.root.join(&self.samples[i].path)
    }

    /// Image `[H, W, C]` of sample `i`.
    pub fn load_image(&self, i: usize) -> Result<Tensor<f32>> {
        let path = self.path_of(i);
        let t: Tensor<f32> = mors1::read_file(&path)?;
        if t.rank() != 3 {
            return Err(Error::Data(format!(
                "{}: expected rank-3 [H,W,C] image, got shape {:?}",
                path.display(),
                t.shape()
            )));
        }
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        check_ratios(self.ratios)?;
        let k = self.num_classes();
        if k == 0 {
            return Err(Error::Data("manifest lists no classes".into()));
        }
        if let Some(s) = self.samples.iter().find(|s| s.label >= k) {
            return Err(Error::Data(format!(
                "{} has label {} but only {k} classes",
                s.path.display(),
                s.label
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }
}
