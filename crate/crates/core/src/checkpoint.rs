//! Checkpoint directories: `manifest.json` (model kind, config, extras and a
//! parameter index) next to `params.bin` (little-endian `f64`, concatenated in
//! index order).

use std::fs;
use std::path::Path;

use ndarray::Array2;
use sarcgen_autograd::ParamStore;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const FORMAT: &str = "sarcgen-checkpoint/1";
pub const MANIFEST: &str = "manifest.json";
pub const PARAMS: &str = "params.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Offset into `params.bin`, in values.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub kind: String,
    pub config: Value,
    #[serde(default)]
    pub extras: Value,
    pub params: Vec<ParamEntry>,
}

/// Writes a checkpoint. The directory is assembled under a temporary name and
/// renamed into place, so a failed save never leaves a partial checkpoint.
/// `files` are extra `(name, bytes)` pairs stored alongside (e.g. a vocabulary).
pub fn save(dir: &Path, kind: &str, config: Value, extras: Value, store: &ParamStore, files: &[(&str, Vec<u8>)]) -> Result<()> {
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let name = dir
        .file_name()
        .ok_or_else(|| Error::data(format!("bad checkpoint path {}", dir.display())))?;
    let tmp = parent.join(format!(".{}.tmp", name.to_string_lossy()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;

    let mut entries = Vec::with_capacity(store.len());
    let mut blob = Vec::with_capacity(store.num_scalars() * 8);
    let mut offset = 0;
    for (name, value) in store.iter() {
        let (r, c) = value.dim();
        entries.push(ParamEntry {
            name: name.to_string(),
            shape: [r, c],
            offset,
        });
        for x in value.iter() {
            blob.extend_from_slice(&x.to_le_bytes());
        }
        offset += r * c;
    }
    let manifest = Manifest {
        format: FORMAT.to_string(),
        kind: kind.to_string(),
        config,
        extras,
        params: entries,
    };
    fs::write(tmp.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    fs::write(tmp.join(PARAMS), blob)?;
    for (fname, bytes) in files {
        fs::write(tmp.join(fname), bytes)?;
    }
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&tmp, dir)?;
    Ok(())
}

/// Loads a checkpoint and checks that it holds a model of `kind`.
pub fn load(dir: &Path, kind: &str) -> Result<(Manifest, ParamStore)> {
    let raw = fs::read(dir.join(MANIFEST))
        .map_err(|e| Error::data(format!("{}: {e}", dir.join(MANIFEST).display())))?;
    let manifest: Manifest = serde_json::from_slice(&raw)
        .map_err(|e| Error::data(format!("{}: malformed manifest: {e}", dir.display())))?;
    if manifest.format != FORMAT {
        return Err(Error::data(format!("unsupported checkpoint format `{}`", manifest.format)));
    }
    if manifest.kind != kind {
        return Err(Error::data(format!(
            "{} holds a `{}` model, expected `{kind}`",
            dir.display(),
            manifest.kind
        )));
    }
    let blob = fs::read(dir.join(PARAMS))?;
    if blob.len() % 8 != 0 {
        return Err(Error::data("params.bin is truncated"));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut store = ParamStore::new();
    for e in &manifest.params {
        let n = e.shape[0] * e.shape[1];
        let slice = values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| Error::data(format!("parameter `{}` lies outside params.bin", e.name)))?;
        let arr = Array2::from_shape_vec((e.shape[0], e.shape[1]), slice.to_vec())
            .map_err(|err| Error::Shape(err.to_string()))?;
        store.insert(e.name.clone(), arr);
    }
    Ok((manifest, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParamStore::new();
        store.insert("a.w", Array2::from_shape_fn((2, 3), |(i, j)| i as f64 * 0.1 - j as f64 / 3.0));
        store.insert("b", Array2::from_elem((1, 1), f64::MIN_POSITIVE));
        let path = dir.path().join("ck");
        save(&path, "toy", json!({"d": 3}), json!({"lo": 1.5}), &store, &[("vocab.txt", b"x\n".to_vec())]).unwrap();
        let (m, back) = load(&path, "toy").unwrap();
        assert_eq!(back, store);
        assert_eq!(m.config["d"], 3);
        assert_eq!(m.extras["lo"], 1.5);
        assert!(path.join("vocab.txt").exists());
        assert!(load(&path, "other").is_err());
    }
}
