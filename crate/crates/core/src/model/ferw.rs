//! FERW: the portable, self-describing weight container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "FERW" | u32 version (=1) | u32 manifest_len | manifest (UTF-8 JSON)
//! per tensor, in manifest order:
//!     u16 name_len | name | u8 dtype (1 = f32) | u8 rank | rank × u32 extent | f32 data…
//! u32 CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! The manifest carries the layer list, input shape, class count, the
//! label-index table and the declared name and shape of every tensor, so a
//! file fully describes the network it holds.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::EmotionLabel;
use crate::model::{Model, ModelSpec};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FERW";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("not a FERW stream (magic {0:?})")]
    BadMagic([u8; 4]),

    #[error("unsupported FERW version {0}")]
    UnsupportedVersion(u32),

    #[error("stream truncated while reading {0}")]
    Truncated(String),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("tensor {tensor}: {detail}")]
    ShapeMismatch { tensor: String, detail: String },

    #[error("tensor {tensor}: unsupported dtype code {code}")]
    UnsupportedDtype { tensor: String, code: u8 },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("{0} trailing bytes after checksum")]
    TrailingBytes(usize),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    model: ModelSpec,
    /// Class names by output index.
    labels: Vec<String>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

fn label_table(classes: usize) -> Vec<String> {
    if classes == EmotionLabel::COUNT {
        EmotionLabel::ALL.iter().map(|l| l.name().to_string()).collect()
    } else {
        (0..classes).map(|i| format!("class{i}")).collect()
    }
}

/// Serialize a model to FERW bytes.
pub fn to_bytes(model: &Model) -> Vec<u8> {
    let spec = model.spec();
    let manifest = Manifest {
        model: spec.clone(),
        labels: label_table(spec.classes),
        tensors: spec
            .tensor_shapes()
            .into_iter()
            .map(|(name, shape)| TensorEntry { name, shape })
            .collect(),
    };
    let manifest = serde_json::to_vec(&manifest).expect("manifest serializes");

    let mut out = Vec::with_capacity(16 + manifest.len() + 4 * spec.parameter_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest);
    for (name, tensor) in model.tensors() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.push(tensor.rank() as u8);
        for &extent in tensor.shape() {
            out.extend_from_slice(&(extent as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn save_weights(model: &Model, mut destination: impl Write) -> Result<(), FormatError> {
    destination.write_all(&to_bytes(model))?;
    destination.flush()?;
    Ok(())
}

pub fn save_file(model: &Model, path: &Path) -> crate::Result<()> {
    fs::write(path, to_bytes(model)).map_err(|e| crate::Error::io(path, e))
}

pub fn load_weights(mut source: impl Read) -> Result<Model, FormatError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

pub fn load_file(path: &Path) -> crate::Result<Model> {
    let bytes = fs::read(path).map_err(|e| crate::Error::io(path, e))?;
    Ok(from_bytes(&bytes)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| FormatError::Truncated(what.to_string()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Structural parse of everything between the version and the checksum.
fn parse_body(cursor: &mut Cursor<'_>) -> Result<(Manifest, Vec<(String, Tensor)>), FormatError> {
    let manifest_len = cursor.u32("manifest length")? as usize;
    let raw = cursor.take(manifest_len, "manifest")?;
    let manifest: Manifest =
        serde_json::from_slice(raw).map_err(|e| FormatError::Manifest(e.to_string()))?;

    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        let context = format!("tensor {}", entry.name);
        let name_len = cursor.u16(&context)? as usize;
        let name = String::from_utf8(cursor.take(name_len, &context)?.to_vec())
            .map_err(|_| FormatError::Manifest(format!("{context}: name is not UTF-8")))?;
        let code = cursor.u8(&context)?;
        if code != DTYPE_F32 {
            return Err(FormatError::UnsupportedDtype { tensor: name, code });
        }
        let rank = cursor.u8(&context)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cursor.u32(&context)? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| FormatError::ShapeMismatch {
                tensor: name.clone(),
                detail: format!("extents {shape:?} overflow"),
            })?;
        let raw = cursor.take(count.saturating_mul(4), &context)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(&shape, data).map_err(|e| FormatError::ShapeMismatch {
            tensor: name.clone(),
            detail: e.to_string(),
        })?;
        tensors.push((name, tensor));
    }
    Ok((manifest, tensors))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model, FormatError> {
    let mut cursor = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = cursor.take(4, "magic")?.try_into().unwrap();
    if &magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let version = cursor.u32("version")?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }

    let checksum = (bytes.len() >= 12).then(|| {
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        (
            u32::from_le_bytes(tail.try_into().unwrap()),
            crc32fast::hash(body),
        )
    });
    let checksum_ok = matches!(checksum, Some((stored, computed)) if stored == computed);
    let checksum_error = || {
        let (stored, computed) = checksum.unwrap_or_default();
        FormatError::Checksum { stored, computed }
    };

    let (manifest, tensors) = match parse_body(&mut cursor) {
        Ok(parsed) => parsed,
        Err(e @ FormatError::Truncated(_)) => return Err(e),
        // Structure is unreadable; blame corruption when the checksum disagrees.
        Err(_) if !checksum_ok => return Err(checksum_error()),
        Err(e) => return Err(e),
    };
    let stored_at = cursor.pos;
    if bytes.len() < stored_at + 4 {
        return Err(FormatError::Truncated("checksum".into()));
    }
    if !checksum_ok {
        return Err(checksum_error());
    }
    if bytes.len() > stored_at + 4 {
        return Err(FormatError::TrailingBytes(bytes.len() - stored_at - 4));
    }

    let spec = manifest.model;
    if manifest.labels != label_table(spec.classes) {
        return Err(FormatError::Manifest(format!(
            "label table {:?} does not match the {}-class index order",
            manifest.labels, spec.classes
        )));
    }
    spec.trace()
        .map_err(|e| FormatError::Manifest(e.to_string()))?;
    let expected = spec.tensor_shapes();
    if expected.len() != tensors.len() || expected.len() != manifest.tensors.len() {
        return Err(FormatError::Manifest(format!(
            "layers declare {} tensors, file holds {}",
            expected.len(),
            tensors.len()
        )));
    }
    for (((want_name, want_shape), entry), (name, tensor)) in
        expected.iter().zip(&manifest.tensors).zip(&tensors)
    {
        if name != want_name || &entry.name != want_name {
            return Err(FormatError::ShapeMismatch {
                tensor: name.clone(),
                detail: format!("expected tensor named {want_name}"),
            });
        }
        if tensor.shape() != want_shape.as_slice() || &entry.shape != want_shape {
            return Err(FormatError::ShapeMismatch {
                tensor: name.clone(),
                detail: format!(
                    "stored shape {:?}, layer declares {want_shape:?}",
                    tensor.shape()
                ),
            });
        }
    }
    Model::from_tensors(spec, tensors).map_err(|e| FormatError::Manifest(e.to_string()))
}
