//! Checkpoint files: a JSON manifest next to a blob of little-endian f64s.
//!
//! Saving `runs/enc` writes `runs/enc.json` and `runs/enc.bin`. The manifest
//! lists every tensor with its shape, dtype and byte offset into the blob,
//! plus a free-form `meta` object and the blob's SHA-256.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::{Error, Result};

const FORMAT: &str = "subplan-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    blob: String,
    sha256: String,
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, Tensor>,
    pub meta: serde_json::Map<String, serde_json::Value>,
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn manifest_path(base: &Path) -> PathBuf {
        with_suffix(base, ".json")
    }

    pub fn blob_path(base: &Path) -> PathBuf {
        with_suffix(base, ".bin")
    }

    pub fn exists(base: &Path) -> bool {
        Self::manifest_path(base).is_file() && Self::blob_path(base).is_file()
    }

    /// Stores parameters, Adam moments and the step counter under `prefix`.
    pub fn put_params(&mut self, prefix: &str, params: &ParamSet) {
        for (name, t) in params.iter() {
            self.tensors.insert(format!("{prefix}{name}"), t.clone());
            let (m, v) = params.moments(name).expect("moments exist for every parameter");
            self.tensors.insert(format!("adam.m/{prefix}{name}"), m.clone());
            self.tensors.insert(format!("adam.v/{prefix}{name}"), v.clone());
        }
        self.meta.insert(format!("adam.step/{prefix}"), serde_json::Value::from(params.step()));
    }

    /// Inverse of [`Checkpoint::put_params`].
    pub fn get_params(&self, prefix: &str) -> Result<ParamSet> {
        let mut out = ParamSet::new();
        for (name, t) in self.tensors.range(prefix.to_string()..) {
            let Some(local) = name.strip_prefix(prefix) else { break };
            if name.starts_with("adam.m/") || name.starts_with("adam.v/") {
                continue;
            }
            out.insert(local, t.clone());
        }
        if out.is_empty() {
            return Err(Error::Format(format!("checkpoint has no parameters under `{prefix}`")));
        }
        let names: Vec<String> = out.names().cloned().collect();
        for local in names {
            let m = self.tensors.get(&format!("adam.m/{prefix}{local}"));
            let v = self.tensors.get(&format!("adam.v/{prefix}{local}"));
            if let (Some(m), Some(v)) = (m, v) {
                out.set_optimizer_state(&local, m.clone(), v.clone())?;
            }
        }
        if let Some(step) = self.meta.get(&format!("adam.step/{prefix}")).and_then(|v| v.as_u64()) {
            out.set_step(step);
        }
        Ok(out)
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        if let Some(dir) = base.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut blob = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            entries.push(Entry { name: name.clone(), shape: t.shape().to_vec(), dtype: "f64".into(), offset: blob.len() as u64 });
            for x in t.data() {
                blob.extend_from_slice(&x.to_le_bytes());
            }
        }
        let blob_path = Self::blob_path(base);
        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            blob: blob_path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
            sha256: hex::encode(Sha256::digest(&blob)),
            meta: serde_json::Value::Object(self.meta.clone()),
            tensors: entries,
        };
        fs::write(&blob_path, &blob)?;
        fs::write(Self::manifest_path(base), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }

    pub fn load(base: &Path) -> Result<Self> {
        let manifest_path = Self::manifest_path(base);
        if !manifest_path.is_file() {
            return Err(Error::MissingArtifact { path: manifest_path, hint: "checkpoint manifest not found".into() });
        }
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
        if manifest.format != FORMAT {
            return Err(Error::Format(format!("not a checkpoint manifest: {}", manifest.format)));
        }
        if manifest.version != VERSION {
            return Err(Error::Version { expected: VERSION, found: manifest.version });
        }
        let blob_path = Self::blob_path(base);
        let blob = fs::read(&blob_path)?;
        if hex::encode(Sha256::digest(&blob)) != manifest.sha256 {
            return Err(Error::Checksum(blob_path));
        }
        let mut tensors = BTreeMap::new();
        for e in manifest.tensors {
            if e.dtype != "f64" {
                return Err(Error::Format(format!("unsupported dtype {}", e.dtype)));
            }
            let len: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + len * 8;
            if end > blob.len() {
                return Err(Error::Format(format!("tensor `{}` runs past end of blob", e.name)));
            }
            let data = blob[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.insert(e.name, Tensor::new(e.shape, data)?);
        }
        let meta = match manifest.meta {
            serde_json::Value::Object(m) => m,
            _ => return Err(Error::Format("checkpoint meta must be an object".into())),
        };
        Ok(Self { tensors, meta })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{Grads, Tensor};

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("ck");
        let mut p = ParamSet::new();
        p.insert("a", Tensor::matrix(2, 2, vec![0.1, -3.5e-300, f64::MIN_POSITIVE, 7.0]).unwrap());
        p.insert("b", Tensor::vector(vec![1.0 / 3.0]));
        let mut g = Grads::new();
        g.insert("a".into(), Tensor::full(&[2, 2], 0.5));
        g.insert("b".into(), Tensor::scalar(-1.0));
        p.adam_step(&g, 0.01).unwrap();

        let mut ck = Checkpoint::new();
        ck.put_params("net/", &p);
        ck.meta.insert("seed".into(), 42.into());
        ck.save(&base).unwrap();
        let back = Checkpoint::load(&base).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.get_params("net/").unwrap(), p);
    }

    #[test]
    fn corrupted_blob_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("ck");
        let mut ck = Checkpoint::new();
        ck.tensors.insert("x".into(), Tensor::vector(vec![1.0, 2.0]));
        ck.save(&base).unwrap();
        let mut bytes = fs::read(Checkpoint::blob_path(&base)).unwrap();
        bytes[3] ^= 0x10;
        fs::write(Checkpoint::blob_path(&base), bytes).unwrap();
        assert!(matches!(Checkpoint::load(&base), Err(Error::Checksum(_))));
    }

    #[test]
    fn missing_manifest_is_a_missing_artifact() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Checkpoint::load(&dir.path().join("nope")), Err(Error::MissingArtifact { .. })));
    }
}
