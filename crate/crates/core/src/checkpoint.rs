//! Named tensor archive.
//!
//! Layout (little-endian): u32 entry count, then per entry a u16 name length,
//! the UTF-8 name and one MORS1 payload. Optimizer state lives under
//! `optim/step`, `optim/m/<param>` and `optim/v/<param>`.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mors1::{self, AnyScalar, AnyTensor};
use crate::optim::Adam;
use crate::param::ParamStore;
use crate::tensor::Tensor;

pub const STEP_KEY: &str = "optim/step";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    entries: Vec<(String, AnyTensor)>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&AnyTensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn push<T: AnyScalar>(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if name.len() > u16::MAX as usize {
            return Err(Error::Usage(format!("entry name of {} bytes is too long", name.len())));
        }
        if self.get(&name).is_some() {
            return Err(Error::Usage(format!("duplicate archive entry {name:?}")));
        }
        self.entries.push((name, T::into_any(t)));
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match t {
                AnyTensor::F32(t) => mors1::encode(t, &mut out)?,
                AnyTensor::F64(t) => mors1::encode(t, &mut out)?,
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = bytes;
        let count = u32::from_le_bytes(take(&mut r, 4, "entry count")?.try_into().unwrap());
        let mut entries = Vec::with_capacity(count.min(1 << 16) as usize);
        for _ in 0..count {
            let len = u16::from_le_bytes(take(&mut r, 2, "name length")?.try_into().unwrap());
            let name = std::str::from_utf8(take(&mut r, len as usize, "name")?)
                .map_err(|_| "entry name is not UTF-8".to_string())?
                .to_owned();
            let t = mors1::decode_from(&mut r).map_err(|e| format!("{name}: {e}"))?;
            entries.push((name, t));
        }
        if !r.is_empty() {
            return Err(format!("{} trailing bytes", r.len()));
        }
        Ok(Self { entries })
    }

    /// Write to `path` through a temporary sibling so a crash never leaves a
    /// half-written file in place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|detail| Error::Format {
            path: path.to_path_buf(),
            detail,
        })
    }

    fn tensor<T: AnyScalar>(&self, name: &str) -> std::result::Result<Tensor<T>, String> {
        let any = self.get(name).ok_or_else(|| format!("missing entry {name:?}"))?;
        let found = any.dtype();
        T::from_any(any.clone()).ok_or_else(|| format!("{name}: expected {:?}, found {found:?}", T::DTYPE))
    }
}

fn take<'a>(r: &mut &'a [u8], n: usize, what: &str) -> std::result::Result<&'a [u8], String> {
    if r.len() < n {
        return Err(format!("truncated while reading {what}"));
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}

/// Snapshot parameters and, optionally, optimizer state.
pub fn archive_state<T: AnyScalar>(params: &ParamStore<T>, optim: Option<&Adam<T>>) -> Result<Archive> {
    let mut a = Archive::new();
    for (_, p) in params.iter() {
        a.push(p.name.clone(), (*p.value).clone())?;
    }
    if let Some(opt) = optim {
        a.push(STEP_KEY, Tensor::<f64>::from_vec([1], vec![opt.step_count() as f64])?)?;
        let (m, v) = opt.moments();
        for ((_, p), m) in params.iter().zip(m) {
            a.push(format!("optim/m/{}", p.name), m.clone())?;
        }
        for ((_, p), v) in params.iter().zip(v) {
            a.push(format!("optim/v/{}", p.name), v.clone())?;
        }
    }
    Ok(a)
}

/// Load every parameter of `params` from `archive`, checking names, dtype
/// and shapes. Entries that are neither parameters nor optimizer state are
/// rejected so a checkpoint from a different architecture cannot load
/// silently.
pub fn restore_state<T: AnyScalar>(
    archive: &Archive,
    params: &mut ParamStore<T>,
    optim: Option<&mut Adam<T>>,
) -> std::result::Result<(), String> {
    for name in archive.names() {
        if !name.starts_with("optim/") && params.id(name).is_none() {
            return Err(format!("unexpected entry {name:?}"));
        }
    }
    let ids: Vec<_> = params.iter().map(|(id, p)| (id, p.name.clone())).collect();
    let mut loaded = Vec::with_capacity(ids.len());
    for (id, name) in &ids {
        let t = archive.tensor::<T>(name)?;
        if t.shape() != params.get(*id).shape() {
            return Err(format!(
                "{name}: shape {:?} does not match model {:?}",
                t.shape(),
                params.get(*id).shape()
            ));
        }
        loaded.push(t);
    }
    for ((id, _), t) in ids.iter().zip(loaded) {
        params.set(*id, t).map_err(|e| e.to_string())?;
    }
    if let Some(opt) = optim {
        let step = archive.tensor::<f64>(STEP_KEY)?;
        let step = match step.data() {
            [s] if *s >= 0.0 && s.fract() == 0.0 => *s as u64,
            other => return Err(format!("{STEP_KEY}: bad value {other:?}")),
        };
        let mut m = Vec::with_capacity(ids.len());
        let mut v = Vec::with_capacity(ids.len());
        for (_, name) in &ids {
            m.push(archive.tensor::<T>(&format!("optim/m/{name}"))?);
            v.push(archive.tensor::<T>(&format!("optim/v/{name}"))?);
        }
        opt.restore(step, m, v).map_err(|e| e.to_string())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::AdamConfig;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("a.weight", Tensor::from_fn([2, 3], |i| i as f32 * 0.25 - 0.3))
            .unwrap();
        s.add("a.bias", Tensor::from_fn([3], |i| -(i as f32))).unwrap();
        s
    }

    #[test]
    fn byte_layout_of_single_entry() {
        let mut a = Archive::new();
        a.push("x", Tensor::<f32>::from_vec([1], vec![1.0]).unwrap()).unwrap();
        let b = a.to_bytes().unwrap();
        assert_eq!(&b[..4], &1u32.to_le_bytes());
        assert_eq!(&b[4..6], &1u16.to_le_bytes());
        assert_eq!(b[6], b'x');
        assert_eq!(&b[7..13], &mors1::MAGIC);
        assert_eq!(Archive::from_bytes(&b).unwrap(), a);
    }

    #[test]
    fn truncated_archive_is_rejected() {
        let a = archive_state(&store(), None).unwrap();
        let b = a.to_bytes().unwrap();
        for cut in [0, 3, 5, b.len() - 1] {
            assert!(Archive::from_bytes(&b[..cut]).is_err(), "cut {cut}");
        }
    }

    #[test]
    fn state_round_trip_is_bitwise() {
        let mut params = store();
        let mut opt = Adam::new(AdamConfig::default(), &params);
        let grads: Vec<_> = params.iter().map(|(_, p)| p.value.map(|x| x * 0.5 + 0.1)).collect();
        opt.step(&mut params, &grads).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.mors");
        archive_state(&params, Some(&opt)).unwrap().save(&path).unwrap();

        let mut fresh = store();
        let mut fresh_opt = Adam::new(AdamConfig::default(), &fresh);
        let loaded = Archive::load(&path).unwrap();
        restore_state(&loaded, &mut fresh, Some(&mut fresh_opt)).unwrap();
        assert_eq!(fresh.fingerprint(), params.fingerprint());
        assert_eq!(fresh_opt.step_count(), 1);
        assert_eq!(fresh_opt.moments().0, opt.moments().0);
        assert_eq!(fresh_opt.moments().1, opt.moments().1);
        assert_eq!(
            archive_state(&fresh, Some(&fresh_opt)).unwrap().to_bytes().unwrap(),
            std::fs::read(&path).unwrap()
        );
    }

    #[test]
    fn foreign_entries_and_shapes_are_rejected() {
        let mut a = archive_state(&store(), None).unwrap();
        a.push("b.weight", Tensor::<f32>::zeros([1])).unwrap();
        assert!(restore_state(&a, &mut store(), None).unwrap_err().contains("b.weight"));

        let mut other = ParamStore::<f32>::new();
        other.add("a.weight", Tensor::zeros([3, 2])).unwrap();
        other.add("a.bias", Tensor::zeros([3])).unwrap();
        let a = archive_state(&other, None).unwrap();
        assert!(restore_state(&a, &mut store(), None).unwrap_err().contains("shape"));
    }

    #[test]
    fn dtype_mismatch_is_rejected() {
        let mut p64 = ParamStore::<f64>::new();
        p64.add("a.weight", Tensor::zeros([2, 3])).unwrap();
        p64.add("a.bias", Tensor::zeros([3])).unwrap();
        let a = archive_state(&p64, None).unwrap();
        assert!(restore_state(&a, &mut store(), None).unwrap_err().contains("expected"));
    }
}
