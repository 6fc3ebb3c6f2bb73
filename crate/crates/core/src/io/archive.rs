//! Binary array archives: an 8-byte magic, a little-endian `u64` header
//! length, a JSON header, then the concatenated little-endian `f64` payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"STRBARR1";
pub const FORMAT_VERSION: u32 = 1;
/// Refuse headers larger than this when reading.
const MAX_HEADER: u64 = 1 << 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the payload in `f64` elements.
    offset: usize,
    sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
    metadata: serde_json::Value,
    arrays: Vec<ArrayEntry>,
    payload_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub kind: String,
    pub metadata: serde_json::Value,
    arrays: Vec<NamedArray>,
}

fn digest(data: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in data {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl Archive {
    pub fn new(kind: impl Into<String>, metadata: serde_json::Value) -> Self {
        Archive {
            kind: kind.into(),
            metadata,
            arrays: Vec::new(),
        }
    }

    pub fn arrays(&self) -> &[NamedArray] {
        &self.arrays
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        let name = name.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidArgument(format!(
                "array '{name}': shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        if self.arrays.iter().any(|a| a.name == name) {
            return Err(Error::InvalidArgument(format!("duplicate array name '{name}'")));
        }
        self.arrays.push(NamedArray { name, shape, data });
        Ok(())
    }

    /// Stored column-major with shape `[rows, cols]`.
    pub fn push_matrix(&mut self, name: impl Into<String>, m: &DMatrix<f64>) -> Result<()> {
        self.push(name, vec![m.nrows(), m.ncols()], m.as_slice().to_vec())
    }

    pub fn push_vector(&mut self, name: impl Into<String>, v: &[f64]) -> Result<()> {
        self.push(name, vec![v.len()], v.to_vec())
    }

    pub fn get(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Integrity {
                path: "<archive>".into(),
                reason: format!("missing array '{name}'"),
            })
    }

    pub fn matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        let a = self.get(name)?;
        match a.shape[..] {
            [r, c] => Ok(DMatrix::from_column_slice(r, c, &a.data)),
            _ => Err(Error::Integrity {
                path: "<archive>".into(),
                reason: format!("array '{name}' is not a matrix"),
            }),
        }
    }

    pub fn vector(&self, name: &str) -> Result<DVector<f64>> {
        let a = self.get(name)?;
        if a.shape.len() != 1 {
            return Err(Error::Integrity {
                path: "<archive>".into(),
                reason: format!("array '{name}' is not a vector"),
            });
        }
        Ok(DVector::from_column_slice(&a.data))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.arrays.len());
        let mut offset = 0;
        for a in &self.arrays {
            entries.push(ArrayEntry {
                name: a.name.clone(),
                shape: a.shape.clone(),
                offset,
                sha256: digest(&a.data),
            });
            offset += a.data.len();
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            kind: self.kind.clone(),
            metadata: self.metadata.clone(),
            arrays: entries,
            payload_len: offset,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::InvalidArgument(format!("archive header: {e}")))?;
        let mut out = Vec::with_capacity(16 + json.len() + 8 * offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for a in &self.arrays {
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses and verifies; `origin` names the source in error messages.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Integrity {
            path: origin.to_path_buf(),
            reason,
        };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not an archive (bad magic)".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("eight bytes"));
        if hlen > MAX_HEADER || 16 + hlen as usize > bytes.len() {
            return Err(bad(format!("header length {hlen} exceeds file size {}", bytes.len())));
        }
        let hend = 16 + hlen as usize;
        let header: Header =
            serde_json::from_slice(&bytes[16..hend]).map_err(|e| bad(format!("malformed header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {}", header.format_version)));
        }
        let payload = &bytes[hend..];
        if payload.len() != 8 * header.payload_len {
            return Err(bad(format!(
                "payload has {} bytes, header declares {} (file truncated or padded)",
                payload.len(),
                8 * header.payload_len
            )));
        }
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for e in header.arrays {
            let n: usize = e.shape.iter().product();
            if e.offset + n > header.payload_len {
                return Err(bad(format!("array '{}' lies outside the payload", e.name)));
            }
            let data: Vec<f64> = payload[8 * e.offset..8 * (e.offset + n)]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
                .collect();
            if digest(&data) != e.sha256 {
                return Err(bad(format!("checksum mismatch in array '{}'", e.name)));
            }
            arrays.push(NamedArray {
                name: e.name,
                shape: e.shape,
                data,
            });
        }
        Ok(Archive {
            kind: header.kind,
            metadata: header.metadata,
            arrays,
        })
    }

    /// Writes through a temporary file in the same directory, then renames.
    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes)
            .and_then(|_| f.sync_all())
            .map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Archive::from_bytes(&bytes, path)
    }

    /// Reads and checks the archive kind.
    pub fn read_kind(path: &Path, kind: &str) -> Result<Self> {
        let a = Archive::read(path)?;
        if a.kind != kind {
            return Err(Error::Integrity {
                path: path.to_path_buf(),
                reason: format!("expected a '{kind}' archive, found '{}'", a.kind),
            });
        }
        Ok(a)
    }
}
