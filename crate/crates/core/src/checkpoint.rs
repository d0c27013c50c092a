//! Checkpoint directories: `manifest.json` plus one raw little-endian `f32`
//! blob per named array (row-major), stored under a path mirroring the name.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::ParamSet;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Classifier,
    EntityEmbeddings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: CheckpointKind,
    pub config: Value,
    pub config_digest: String,
    pub arrays: BTreeMap<String, Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<Vec<String>>,
}

/// SHA-256 (hex) of the config's canonical JSON: object keys sorted, no
/// insignificant whitespace.
pub fn config_digest(config: &Value) -> String {
    // serde_json's default map is ordered by key, so this is canonical.
    let bytes = serde_json::to_vec(config).expect("a JSON value always serializes");
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub arrays: ParamSet,
}

fn blob_path(dir: &Path, name: &str) -> Result<PathBuf> {
    let mut path = dir.to_path_buf();
    for part in name.split('/') {
        if part.is_empty() || part == "." || part == ".." || part == MANIFEST {
            return Err(Error::Checkpoint {
                path: dir.to_path_buf(),
                message: format!("array name `{name}` cannot be stored as a path"),
            });
        }
        path.push(part);
    }
    Ok(path)
}

impl Checkpoint {
    /// Arrays are stored as `f32`; values are rounded on write.
    pub fn new(
        kind: CheckpointKind,
        config: Value,
        arrays: ParamSet,
        vocabulary: Option<Vec<String>>,
    ) -> Self {
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            kind,
            config_digest: config_digest(&config),
            config,
            arrays: arrays.shapes(),
            vocabulary,
        };
        Self { manifest, arrays }
    }

    /// Writes into a sibling temporary directory, then renames it over `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let name = dir.file_name().ok_or_else(|| Error::Checkpoint {
            path: dir.to_path_buf(),
            message: "checkpoint path has no final component".into(),
        })?;
        let parent = match dir.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent)?;
        let tmp = parent.join(format!(
            ".{}.tmp-{}",
            name.to_string_lossy(),
            std::process::id()
        ));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        let staged = self.write_into(&tmp);
        if let Err(e) = staged {
            let _ = fs::remove_dir_all(&tmp);
            return Err(e);
        }
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
        fs::rename(&tmp, dir)?;
        Ok(())
    }

    fn write_into(&self, tmp: &Path) -> Result<()> {
        for (name, array) in self.arrays.iter() {
            let path = blob_path(tmp, name)?;
            if let Some(p) = path.parent() {
                fs::create_dir_all(p)?;
            }
            let mut bytes = Vec::with_capacity(array.len() * 4);
            // iter() walks in logical (row-major) order
            for &x in array.iter() {
                bytes.extend_from_slice(&(x as f32).to_le_bytes());
            }
            fs::write(path, bytes)?;
        }
        let mut json = serde_json::to_vec_pretty(&self.manifest)?;
        json.push(b'\n');
        fs::write(tmp.join(MANIFEST), json)?;
        Ok(())
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let err = |message: String| Error::Checkpoint {
            path: dir.to_path_buf(),
            message,
        };
        let text = fs::read(dir.join(MANIFEST))
            .map_err(|e| err(format!("cannot read {MANIFEST}: {e}")))?;
        let manifest: Manifest =
            serde_json::from_slice(&text).map_err(|e| err(format!("malformed {MANIFEST}: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(err(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }
        if config_digest(&manifest.config) != manifest.config_digest {
            return Err(err("config digest does not match the stored config".into()));
        }
        let mut arrays = ParamSet::new();
        for (name, shape) in &manifest.arrays {
            let path = blob_path(dir, name)?;
            let bytes = fs::read(&path).map_err(|e| err(format!("array `{name}`: {e}")))?;
            let expected = shape.iter().product::<usize>() * 4;
            if bytes.len() != expected {
                return Err(err(format!(
                    "array `{name}` has {} bytes, expected {expected} for shape {shape:?}",
                    bytes.len()
                )));
            }
            let values: Vec<f64> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            let array = ArrayD::from_shape_vec(IxDyn(shape), values).expect("length checked above");
            arrays.insert(name.clone(), array);
        }
        Ok(Self { manifest, arrays })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> Checkpoint {
        let mut p = ParamSet::new();
        p.insert(
            "a/w",
            ArrayD::from_shape_vec(IxDyn(&[2, 3]), vec![0.5, -1.25, 3.0, 1e-3, 7.0, -0.0]).unwrap(),
        );
        p.insert("b", ArrayD::from_shape_vec(IxDyn(&[1]), vec![2.0]).unwrap());
        p.round_to_f32();
        Checkpoint::new(
            CheckpointKind::Classifier,
            json!({"z": 1, "a": [1, 2]}),
            p,
            Some(vec!["[PAD]".into()]),
        )
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt");
        let c = sample();
        c.write(&path).unwrap();
        let back = Checkpoint::read(&path).unwrap();
        assert_eq!(back, c);
        for (name, a) in c.arrays.iter() {
            let b = back.arrays.get(name).unwrap();
            assert!(a
                .iter()
                .zip(b.iter())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        // overwrite in place
        c.write(&path).unwrap();
        assert!(path.join("a").join("w").is_file());
    }

    #[test]
    fn digest_is_key_order_independent() {
        let a: Value = serde_json::from_str(r#"{"x": 1, "y": {"b": 2, "a": 3}}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"y": {"a": 3, "b": 2}, "x": 1}"#).unwrap();
        assert_eq!(config_digest(&a), config_digest(&b));
        assert_ne!(config_digest(&a), config_digest(&json!({"x": 2})));
        assert_eq!(config_digest(&a).len(), 64);
    }

    #[test]
    fn truncated_blob_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt");
        sample().write(&path).unwrap();
        let blob = path.join("a").join("w");
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 2]).unwrap();
        let e = Checkpoint::read(&path).unwrap_err();
        assert!(e.to_string().contains("a/w"), "{e}");
    }

    #[test]
    fn tampered_config_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt");
        sample().write(&path).unwrap();
        let m = fs::read_to_string(path.join(MANIFEST))
            .unwrap()
            .replace("\"z\": 1", "\"z\": 2");
        fs::write(path.join(MANIFEST), m).unwrap();
        assert!(Checkpoint::read(&path)
            .unwrap_err()
            .to_string()
            .contains("digest"));
    }

    #[test]
    fn unsafe_names_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = ParamSet::new();
        p.insert("../escape", ArrayD::zeros(IxDyn(&[1])));
        let c = Checkpoint::new(CheckpointKind::Classifier, json!({}), p, None);
        assert!(c.write(dir.path().join("ckpt")).is_err());
        assert!(!dir.path().join("escape").exists());
    }
}
