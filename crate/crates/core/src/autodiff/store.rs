//! Named parameter storage and checkpoint serialization.
//!
//! Parameters live in a `BTreeMap`, so every iteration — gradient
//! application, Adam updates, checkpoint writing — runs in lexicographic
//! name order and is reproducible by construction.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{CoreError, Result};

/// Current checkpoint layout version.
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
struct Entry {
    value: Tensor,
    grad: Tensor,
}

/// Gradients keyed by parameter name, as returned by backward passes.
#[derive(Debug, Clone, Default)]
pub struct GradMap {
    grads: BTreeMap<String, Tensor>,
}

impl GradMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: String, grad: Tensor) {
        self.grads.insert(name, grad);
    }

    /// Add `grad` into the slot for `name`, creating it if absent.
    pub fn accumulate(&mut self, name: &str, grad: &Tensor) {
        match self.grads.get_mut(name) {
            Some(t) => {
                for (d, s) in t.data_mut().iter_mut().zip(grad.data()) {
                    *d += s;
                }
            }
            None => {
                self.grads.insert(name.to_string(), grad.clone());
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.grads.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Named f64 tensors with paired gradient buffers.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a new parameter. Names must be unique and values finite.
    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(CoreError::DuplicateParam(name.to_string()));
        }
        if !value.all_finite() {
            return Err(CoreError::NonFinite(format!("param `{name}`")));
        }
        let grad = Tensor::zeros(value.shape());
        self.entries.insert(name.to_string(), Entry { value, grad });
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| CoreError::UnknownParam(name.to_string()))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|e| &e.grad)
            .ok_or_else(|| CoreError::UnknownParam(name.to_string()))
    }

    /// Overwrite a parameter value; the shape must match.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| CoreError::UnknownParam(name.to_string()))?;
        if e.value.shape() != value.shape() {
            return Err(CoreError::shape(
                format!("set_value `{name}`"),
                e.value.shape(),
                value.shape(),
            ));
        }
        e.value = value;
        Ok(())
    }

    /// Names in lexicographic order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    /// Total number of scalar parameters, optionally restricted to a prefix.
    pub fn scalar_count(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, e)| e.value.len())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.data_mut().fill(0.0);
        }
    }

    /// Add a gradient map into the stored gradient buffers.
    pub fn accumulate(&mut self, grads: &GradMap) -> Result<()> {
        for (name, g) in grads.iter() {
            let e = self
                .entries
                .get_mut(name)
                .ok_or_else(|| CoreError::UnknownParam(name.clone()))?;
            if e.grad.shape() != g.shape() {
                return Err(CoreError::shape(
                    format!("grad `{name}`"),
                    e.grad.shape(),
                    g.shape(),
                ));
            }
            for (d, s) in e.grad.data_mut().iter_mut().zip(g.data()) {
                *d += s;
            }
        }
        Ok(())
    }

    /// Visit `(name, value, grad)` mutably in name order; used by optimizers.
    pub(crate) fn for_each_mut(
        &mut self,
        prefix: &str,
        mut f: impl FnMut(&str, &mut Tensor, &mut Tensor),
    ) {
        for (name, e) in self.entries.iter_mut() {
            if name.starts_with(prefix) {
                f(name, &mut e.value, &mut e.grad);
            }
        }
    }

    /// Clone the entries under any of `prefixes` into a new store.
    pub fn subset(&self, prefixes: &[&str]) -> ParamStore {
        let mut out = ParamStore::new();
        for (name, e) in &self.entries {
            if prefixes.iter().any(|p| name.starts_with(p)) {
                out.entries.insert(
                    name.clone(),
                    Entry {
                        value: e.value.clone(),
                        grad: Tensor::zeros(e.value.shape()),
                    },
                );
            }
        }
        out
    }

    /// Copy values for every entry of `other` into `self` (names and shapes
    /// must already exist and match).
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        for (name, e) in &other.entries {
            self.set_value(name, e.value.clone())?;
        }
        Ok(())
    }

    pub fn to_manifest(&self, tag: &str) -> CheckpointManifest {
        let entries = self
            .entries
            .iter()
            .map(|(name, e)| {
                let mut bytes = Vec::with_capacity(e.value.len() * 8);
                for v in e.value.data() {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                ManifestEntry {
                    name: name.clone(),
                    shape: e.value.shape().to_vec(),
                    dtype: "f64".to_string(),
                    data: BASE64.encode(bytes),
                }
            })
            .collect();
        CheckpointManifest {
            format_version: CHECKPOINT_VERSION,
            tag: tag.to_string(),
            entries,
        }
    }

    pub fn from_manifest(manifest: &CheckpointManifest) -> Result<ParamStore> {
        if manifest.format_version != CHECKPOINT_VERSION {
            return Err(CoreError::Checkpoint(format!(
                "unsupported format_version {} (expected {})",
                manifest.format_version, CHECKPOINT_VERSION
            )));
        }
        let mut store = ParamStore::new();
        for entry in &manifest.entries {
            if entry.dtype != "f64" {
                return Err(CoreError::Checkpoint(format!(
                    "entry `{}` has dtype {}, expected f64",
                    entry.name, entry.dtype
                )));
            }
            let bytes = BASE64
                .decode(&entry.data)
                .map_err(|e| CoreError::Checkpoint(format!("entry `{}`: {e}", entry.name)))?;
            if bytes.len() % 8 != 0 {
                return Err(CoreError::Checkpoint(format!(
                    "entry `{}`: byte length {} not a multiple of 8",
                    entry.name,
                    bytes.len()
                )));
            }
            let data: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let value = Tensor::from_vec(&entry.shape, data)
                .map_err(|_| CoreError::Checkpoint(format!("entry `{}`: shape/data mismatch", entry.name)))?;
            store.insert(&entry.name, value)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path, tag: &str) -> Result<()> {
        let manifest = self.to_manifest(tag);
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CoreError::Checkpoint(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(ParamStore, String)> {
        let json = std::fs::read_to_string(path)?;
        let manifest: CheckpointManifest =
            serde_json::from_str(&json).map_err(|e| CoreError::Checkpoint(e.to_string()))?;
        let store = ParamStore::from_manifest(&manifest)?;
        Ok((store, manifest.tag))
    }
}

/// On-disk checkpoint: JSON manifest with base64 little-endian f64 payloads.
#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    /// `"full"` for resumable training state, `"transfer"` for the
    /// team-size-independent per-agent subset.
    pub tag: String,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub data: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("b.w", Tensor::matrix(2, 3, vec![0.1, -0.25, 3e-17, 1.5, -2.0, 0.0]).unwrap())
            .unwrap();
        s.insert("a.v", Tensor::vector(vec![f64::MIN_POSITIVE, -1.0 / 3.0])).unwrap();
        s
    }

    #[test]
    fn duplicate_and_unknown_names_error() {
        let mut s = sample_store();
        assert!(matches!(
            s.insert("a.v", Tensor::scalar(0.0)),
            Err(CoreError::DuplicateParam(_))
        ));
        assert!(matches!(s.value("nope"), Err(CoreError::UnknownParam(_))));
    }

    #[test]
    fn non_finite_params_rejected() {
        let mut s = ParamStore::new();
        assert!(s.insert("x", Tensor::scalar(f64::NAN)).is_err());
    }

    #[test]
    fn accumulate_adds_into_grads() {
        let mut s = sample_store();
        let mut gm = GradMap::new();
        gm.insert("a.v".into(), Tensor::vector(vec![1.0, 2.0]));
        s.accumulate(&gm).unwrap();
        s.accumulate(&gm).unwrap();
        assert_eq!(s.grad("a.v").unwrap().data(), &[2.0, 4.0]);
        s.zero_grads();
        assert_eq!(s.grad("a.v").unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let s = sample_store();
        s.save(&path, "full").unwrap();
        let (loaded, tag) = ParamStore::load(&path).unwrap();
        assert_eq!(tag, "full");
        for name in s.names() {
            let a = s.value(name).unwrap();
            let b = loaded.value(name).unwrap();
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits(), "param {name} not bit-exact");
            }
        }
    }

    #[test]
    fn subset_filters_by_prefix() {
        let s = sample_store();
        let sub = s.subset(&["a."]);
        assert!(sub.contains("a.v"));
        assert!(!sub.contains("b.w"));
        assert_eq!(sub.scalar_count(""), 2);
    }

    #[test]
    fn manifest_version_checked() {
        let s = sample_store();
        let mut m = s.to_manifest("full");
        m.format_version = 99;
        assert!(ParamStore::from_manifest(&m).is_err());
    }
}
