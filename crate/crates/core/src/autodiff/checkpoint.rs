//! Checkpoints: a JSON manifest (names, shapes, dtype) next to a flat
//! little-endian blob of values in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub dtype: String,
    pub blob: String,
    pub params: Vec<ManifestEntry>,
}

/// Writes `<stem>.json` and `<stem>.bin` in `dir`.
pub fn save_checkpoint<T: Scalar>(params: &ParamSet<T>, dir: &Path, stem: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let blob_name = format!("{stem}.bin");
    let manifest = CheckpointManifest {
        dtype: T::DTYPE.to_string(),
        blob: blob_name.clone(),
        params: params
            .iter()
            .map(|p| ManifestEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    let mut blob = Vec::with_capacity(params.numel() * T::BYTES);
    for p in params.iter() {
        for &v in p.value.data() {
            v.write_le(&mut blob);
        }
    }
    let json_path = dir.join(format!("{stem}.json"));
    fs::write(&json_path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&json_path, e))?;
    let blob_path = dir.join(blob_name);
    fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`] given its manifest path.
pub fn load_checkpoint<T: Scalar>(manifest_path: &Path) -> Result<ParamSet<T>> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.dtype != T::DTYPE {
        return Err(Error::Format {
            what: "checkpoint",
            detail: format!("dtype {} but {} requested", manifest.dtype, T::DTYPE),
        });
    }
    let blob_path = manifest_path.with_file_name(&manifest.blob);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let expected: usize = manifest.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    if blob.len() != expected * T::BYTES {
        return Err(Error::Format {
            what: "checkpoint",
            detail: format!("blob holds {} bytes, manifest needs {}", blob.len(), expected * T::BYTES),
        });
    }
    let mut params = ParamSet::new();
    let mut chunks = blob.chunks_exact(T::BYTES);
    for entry in manifest.params {
        let numel = entry.shape.iter().product();
        let data = chunks.by_ref().take(numel).map(T::read_le).collect();
        params.push(entry.name, Tensor::new(entry.shape, data)?);
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = ParamSet::<f32>::new();
        p.push("a", Tensor::from_f64(&[2, 2], &[1.0, -2.5, 3.25, 0.0]).unwrap());
        p.push("b", Tensor::from_f64(&[3], &[1e-7, 4.0, -0.5]).unwrap());
        save_checkpoint(&p, dir.path(), "ckpt").unwrap();
        let back: ParamSet<f32> = load_checkpoint(&dir.path().join("ckpt.json")).unwrap();
        assert_eq!(back, p);
        assert!(load_checkpoint::<f64>(&dir.path().join("ckpt.json")).is_err());
        let blob = std::fs::read(dir.path().join("ckpt.bin")).unwrap();
        assert_eq!(blob.len(), 7 * 4);
        assert_eq!(&blob[4..8], &(-2.5f32).to_le_bytes());
    }
}
