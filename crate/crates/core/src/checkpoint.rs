//! Model checkpoint container: one line of JSON manifest, then the raw
//! little-endian IEEE-754 `f64` arrays in catalog order.
//!
//! The manifest records the model kind, its dimensions, the class names,
//! a hash of the vocabulary the model was trained against, an echo of the
//! training configuration, and a catalog of `(name, shape, offset, len)`
//! entries. Offsets are byte offsets from the start of the array section.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT: &str = "exploit-target-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub model_kind: String,
    pub dims: BTreeMap<String, usize>,
    pub classes: Vec<String>,
    pub vocab_hash: String,
    pub config: serde_json::Value,
    pub arrays: Vec<ArrayEntry>,
    /// Kind-specific structured payload (decision-tree nodes).
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub extra: serde_json::Value,
}

impl Manifest {
    pub fn new(model_kind: &str, classes: &[String], vocab_hash: String, config: serde_json::Value) -> Self {
        Manifest {
            format: FORMAT.to_string(),
            model_kind: model_kind.to_string(),
            dims: BTreeMap::new(),
            classes: classes.to_vec(),
            vocab_hash,
            config,
            arrays: Vec::new(),
            extra: serde_json::Value::Null,
        }
    }

    pub fn dim(&self, key: &str) -> Result<usize> {
        self.dims
            .get(key)
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("manifest lacks dimension {key:?}")))
    }
}

/// Writes `manifest` (its catalog is rebuilt from `arrays`) followed by the data.
pub fn write(path: impl AsRef<Path>, mut manifest: Manifest, arrays: &[(String, Vec<usize>, &[f64])]) -> Result<()> {
    let path = path.as_ref();
    let mut offset = 0u64;
    manifest.arrays = arrays
        .iter()
        .map(|(name, shape, data)| {
            assert_eq!(shape.iter().product::<usize>(), data.len(), "shape of {name} does not match its data");
            let entry = ArrayEntry { name: name.clone(), shape: shape.clone(), offset, len: data.len() as u64 };
            offset += 8 * data.len() as u64;
            entry
        })
        .collect();
    let mut bytes = serde_json::to_vec(&manifest)?;
    bytes.push(b'\n');
    bytes.reserve(offset as usize);
    for (_, _, data) in arrays {
        for v in data.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint; arrays come back in catalog order.
pub fn read(path: impl AsRef<Path>) -> Result<(Manifest, Vec<Vec<f64>>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing manifest terminator".into()))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[..split])?;
    if manifest.format != FORMAT {
        return Err(Error::Checkpoint(format!("unsupported format {:?}", manifest.format)));
    }
    let data = &bytes[split + 1..];
    let mut arrays = Vec::with_capacity(manifest.arrays.len());
    for entry in &manifest.arrays {
        if entry.shape.iter().product::<usize>() as u64 != entry.len {
            return Err(Error::Checkpoint(format!("array {} shape disagrees with its length", entry.name)));
        }
        let start = entry.offset as usize;
        let end = start + 8 * entry.len as usize;
        let raw = data
            .get(start..end)
            .ok_or_else(|| Error::Checkpoint(format!("array {} runs past the end of the file", entry.name)))?;
        arrays.push(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect());
    }
    Ok((manifest, arrays))
}

/// Looks up an array by name and checks its shape.
pub fn take(manifest: &Manifest, arrays: &[Vec<f64>], name: &str, shape: &[usize]) -> Result<Vec<f64>> {
    let i = manifest
        .arrays
        .iter()
        .position(|e| e.name == name)
        .ok_or_else(|| Error::Checkpoint(format!("missing array {name:?}")))?;
    if manifest.arrays[i].shape != shape {
        return Err(Error::Checkpoint(format!(
            "array {name:?} has shape {:?}, expected {shape:?}",
            manifest.arrays[i].shape
        )));
    }
    Ok(arrays[i].clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_manifest_line_then_le_doubles() {
        let tmp = tempfile::TempDir::new().unwrap();
        let p = tmp.path().join("m.ckpt");
        let m = Manifest::new("toy", &["a".into(), "b".into()], "h".into(), serde_json::json!({"lr": 0.1}));
        let a = [1.5, -2.0];
        let b = [0.25];
        write(&p, m, &[("a".into(), vec![2], &a), ("b".into(), vec![1, 1], &b)]).unwrap();

        let bytes = fs::read(&p).unwrap();
        let nl = bytes.iter().position(|&c| c == b'\n').unwrap();
        assert_eq!(bytes.len() - nl - 1, 24);
        assert_eq!(&bytes[nl + 1..nl + 9], &1.5f64.to_le_bytes());

        let (m, arrays) = read(&p).unwrap();
        assert_eq!(m.arrays[1].offset, 16);
        assert_eq!(arrays, vec![vec![1.5, -2.0], vec![0.25]]);
        assert!(take(&m, &arrays, "b", &[1]).is_err());
        assert_eq!(take(&m, &arrays, "b", &[1, 1]).unwrap(), vec![0.25]);

        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read(&p).is_err());
    }
}
