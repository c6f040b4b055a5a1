//! Dense-array archive: a directory holding `manifest.json` plus one raw
//! little-endian payload file per array.

use std::fs;
use std::path::{Path, PathBuf};

use hoigen_core::linalg::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
const FORMAT: &str = "hoigen-archive";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<String>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub arrays: Vec<ArrayEntry>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

fn file_name(name: &str) -> String {
    let mut s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect();
    s.push_str(".bin");
    s
}

/// Collects arrays and writes them on `finish`.
pub struct ArchiveWriter {
    dir: PathBuf,
    arrays: Vec<ArrayEntry>,
}

impl ArchiveWriter {
    pub fn create(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            dir,
            arrays: Vec::new(),
        })
    }

    pub fn put(&mut self, name: &str, shape: &[usize], dtype: DType, branch: Option<&str>, data: &[f64]) -> Result<()> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::format(
                &self.dir,
                format!("array `{name}` has {} values for shape {shape:?}", data.len()),
            ));
        }
        if self.arrays.iter().any(|a| a.name == name) {
            return Err(Error::format(&self.dir, format!("array `{name}` written twice")));
        }
        if dtype == DType::F32 && data.iter().any(|v| v.is_finite() && v.abs() > f64::from(f32::MAX)) {
            return Err(Error::format(&self.dir, format!("array `{name}` overflows float32")));
        }
        let file = file_name(name);
        if self.arrays.iter().any(|a| a.file == file) {
            return Err(Error::format(&self.dir, format!("array `{name}` collides with another file name")));
        }
        let mut bytes = Vec::with_capacity(data.len() * dtype.width());
        for &v in data {
            match dtype {
                DType::F32 => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
                DType::F64 => bytes.extend_from_slice(&v.to_le_bytes()),
            }
        }
        let path = self.dir.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.arrays.push(ArrayEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            dtype,
            branch: branch.map(str::to_string),
            file,
        });
        Ok(())
    }

    pub fn put_matrix(&mut self, name: &str, m: &Matrix, dtype: DType, branch: Option<&str>) -> Result<()> {
        self.put(name, &[m.rows(), m.cols()], dtype, branch, m.as_slice())
    }

    pub fn finish(self, metadata: serde_json::Value) -> Result<Archive> {
        let manifest = Manifest {
            format: FORMAT.to_string(),
            version: VERSION,
            arrays: self.arrays,
            metadata,
        };
        let path = self.dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::format(&path, e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(Archive { dir: self.dir, manifest })
    }
}

#[derive(Debug, Clone)]
pub struct Archive {
    dir: PathBuf,
    manifest: Manifest,
}

impl Archive {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(Error::format(
                &path,
                format!("unsupported archive {} v{}", manifest.format, manifest.version),
            ));
        }
        Ok(Self { dir, manifest })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn metadata(&self) -> &serde_json::Value {
        &self.manifest.metadata
    }

    pub fn entry(&self, name: &str) -> Result<&ArrayEntry> {
        self.manifest
            .arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::format(self.dir.join(MANIFEST), format!("no array named `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.manifest.arrays.iter().any(|a| a.name == name)
    }

    /// Shape and values of `name`, widened to `f64`.
    pub fn get(&self, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        let entry = self.entry(name)?;
        let path = self.dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let n: usize = entry.shape.iter().product();
        let w = entry.dtype.width();
        if bytes.len() != n * w {
            return Err(Error::format(
                &path,
                format!("expected {} bytes for shape {:?}, found {}", n * w, entry.shape, bytes.len()),
            ));
        }
        let values = bytes
            .chunks_exact(w)
            .map(|c| match entry.dtype {
                DType::F32 => f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64,
                DType::F64 => f64::from_le_bytes(c.try_into().expect("8-byte chunk")),
            })
            .collect();
        Ok((entry.shape.clone(), values))
    }

    pub fn matrix(&self, name: &str) -> Result<Matrix> {
        let (shape, values) = self.get(name)?;
        match shape.as_slice() {
            [r, c] => Ok(Matrix::from_vec(*r, *c, values)?),
            _ => Err(Error::format(self.dir.join(MANIFEST), format!("`{name}` is not two-dimensional"))),
        }
    }

    pub fn vector(&self, name: &str) -> Result<Vec<f64>> {
        let (shape, values) = self.get(name)?;
        if shape.len() != 1 {
            return Err(Error::format(self.dir.join(MANIFEST), format!("`{name}` is not one-dimensional")));
        }
        Ok(values)
    }
}
