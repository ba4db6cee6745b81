//! Flat little-endian `f64` dumps with a JSON sidecar describing the layout.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpMeta {
    pub dtype: String,
    /// Row-major shape of the array.
    pub shape: Vec<usize>,
    /// Free-form description of the axes.
    pub layout: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub row_times: Vec<f64>,
}

impl DumpMeta {
    pub fn new(shape: Vec<usize>, layout: impl Into<String>) -> Self {
        Self {
            dtype: "f64-le".into(),
            shape,
            layout: layout.into(),
            row_times: Vec::new(),
        }
    }
}

/// Sidecar path: `name.bin` -> `name.bin.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_dump(path: impl AsRef<Path>, data: &[f64], meta: &DumpMeta) -> Result<()> {
    let path = path.as_ref();
    let expected: usize = meta.shape.iter().product();
    if expected != data.len() {
        return Err(Error::ShapeMismatch {
            expected,
            got: data.len(),
            context: "dump data vs declared shape",
        });
    }
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

pub fn read_dump(path: impl AsRef<Path>) -> Result<(Vec<f64>, DumpMeta)> {
    let path = path.as_ref();
    let meta: DumpMeta = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!("{} is not a whole number of f64 values", path.display())));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let expected: usize = meta.shape.iter().product();
    if expected != data.len() {
        return Err(Error::Format(format!(
            "dump holds {} values but the sidecar declares {expected}",
            data.len()
        )));
    }
    Ok((data, meta))
}
