//! Binary tensor archive exchanged with descriptor exporters.
//!
//! Layout (little-endian):
//!
//! | bytes | field                                   |
//! |-------|-----------------------------------------|
//! | 0–3   | magic `ZS6D`                            |
//! | 4–5   | version `u16` = 1                       |
//! | 6     | dtype `u8` (0 = float32, 1 = uint16)    |
//! | 7     | reserved, 0                             |
//! | 8–19  | rows, cols, dim as `u32`                |
//! | 20–   | row-major payload                       |
//!
//! An optional JSON metadata block may follow the payload, prefixed by its
//! byte length as `u32`.

use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"ZS6D";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("bad magic: expected \"ZS6D\", found {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported version field: {found}")]
    UnsupportedVersion { found: u16 },
    #[error("unsupported dtype field: {found}")]
    UnsupportedDtype { found: u8 },
    #[error("truncated payload while reading '{field}': need {needed} bytes, {available} available")]
    TruncatedPayload { field: &'static str, needed: usize, available: usize },
    #[error("tensor contains non-finite values")]
    NonFinite,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("metadata block is not valid JSON: {0}")]
    Metadata(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U16(Vec<u16>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U16(v) => v.len(),
        }
    }

    fn dtype(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::U16(_) => 1,
        }
    }
}

/// `rows × cols × dim` tensor with optional JSON metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: u32,
    pub cols: u32,
    pub dim: u32,
    pub data: TensorData,
    pub metadata: Option<serde_json::Value>,
}

impl Tensor {
    pub fn new(rows: u32, cols: u32, dim: u32, data: TensorData) -> Result<Self, TensorError> {
        let expect = rows as usize * cols as usize * dim as usize;
        if data.len() != expect {
            return Err(TensorError::Shape(format!("{rows}x{cols}x{dim} needs {expect} values, got {}", data.len())));
        }
        Ok(Self { rows, cols, dim, data, metadata: None })
    }

    pub fn with_metadata(mut self, metadata: serde_json::Value) -> Self {
        self.metadata = Some(metadata);
        self
    }

    pub fn encode(&self) -> Result<Vec<u8>, TensorError> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.data.dtype());
        out.push(0);
        for v in [self.rows, self.cols, self.dim] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(TensorError::NonFinite);
                }
                v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
            }
            TensorData::U16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        if let Some(meta) = &self.metadata {
            let json = serde_json::to_vec(meta).map_err(|e| TensorError::Metadata(e.to_string()))?;
            out.extend_from_slice(&(json.len() as u32).to_le_bytes());
            out.extend_from_slice(&json);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, TensorError> {
        let take = |field: &'static str, at: usize, n: usize| {
            bytes.get(at..at + n).ok_or(TensorError::TruncatedPayload {
                field,
                needed: n,
                available: bytes.len().saturating_sub(at),
            })
        };
        let magic = take("magic", 0, 4)?;
        if magic != MAGIC {
            return Err(TensorError::BadMagic { found: magic.try_into().expect("4 bytes") });
        }
        let version = u16::from_le_bytes(take("version", 4, 2)?.try_into().expect("2 bytes"));
        if version != VERSION {
            return Err(TensorError::UnsupportedVersion { found: version });
        }
        let dtype = take("dtype", 6, 1)?[0];
        if dtype > 1 {
            return Err(TensorError::UnsupportedDtype { found: dtype });
        }
        take("reserved", 7, 1)?;
        let u32_at = |field, at| take(field, at, 4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")));
        let rows = u32_at("rows", 8)?;
        let cols = u32_at("cols", 12)?;
        let dim = u32_at("dim", 16)?;
        let count = rows as usize * cols as usize * dim as usize;
        let elem = if dtype == 0 { 4 } else { 2 };
        let payload = take("payload", HEADER_LEN, count * elem)?;
        let data = if dtype == 0 {
            TensorData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4"))).collect())
        } else {
            TensorData::U16(payload.chunks_exact(2).map(|c| u16::from_le_bytes(c.try_into().expect("2"))).collect())
        };
        let mut at = HEADER_LEN + count * elem;
        let metadata = if at < bytes.len() {
            let len = u32_at("metadata_length", at)? as usize;
            at += 4;
            let json = take("metadata", at, len)?;
            Some(serde_json::from_slice(json).map_err(|e| TensorError::Metadata(e.to_string()))?)
        } else {
            None
        };
        Ok(Self { rows, cols, dim, data, metadata })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), TensorError> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()?).map_err(|source| TensorError::Io { path: path.display().to_string(), source })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, TensorError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| TensorError::Io { path: path.display().to_string(), source })?;
        Self::decode(&bytes)
    }
}
