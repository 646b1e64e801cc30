//! Model checkpoints: a JSON header naming every tensor and its shape, the
//! parameters as one flat little-endian f64 vector, and a SHA-256 trailer
//! over everything before it.
//!
//! ```text
//! STCK1\n <header json> \n <f64 LE ...> <32-byte sha256>
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::nn::Param;
use crate::scalar::Scalar;

const MAGIC: &[u8] = b"STCK1\n";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch (file corrupted)")]
    ChecksumMismatch,
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint holds a {found} model, expected {expected}")]
    WrongKind { expected: String, found: String },
    #[error("tensor layout differs at #{index}: expected {expected}, found {found}")]
    Layout { index: usize, expected: String, found: String },
    #[error("checkpoint has {found} tensors, model has {expected}")]
    TensorCount { expected: usize, found: usize },
    #[error("checkpoint lacks metadata key `{0}`")]
    MissingMeta(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: BTreeMap<String, u64>,
    tensors: Vec<TensorInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: BTreeMap<String, u64>,
    pub tensors: Vec<TensorInfo>,
    pub data: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn from_params<T: Scalar>(kind: &str, meta: BTreeMap<String, u64>, params: &[&Param<T>]) -> Self {
        Self {
            kind: kind.to_string(),
            meta,
            tensors: params.iter().map(|p| TensorInfo { name: p.name.clone(), shape: p.shape.clone() }).collect(),
            data: params.iter().map(|p| p.data.iter().map(|v| v.as_f64()).collect()).collect(),
        }
    }

    pub fn meta_value(&self, key: &str) -> Result<u64, CheckpointError> {
        self.meta.get(key).copied().ok_or_else(|| CheckpointError::MissingMeta(key.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header { kind: self.kind.clone(), meta: self.meta.clone(), tensors: self.tensors.clone() };
        let mut out = MAGIC.to_vec();
        out.extend(serde_json::to_vec(&header).expect("header serializes"));
        out.push(b'\n');
        for t in &self.data {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if !bytes.starts_with(MAGIC) {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < MAGIC.len() + 32 {
            return Err(CheckpointError::Truncated);
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != trailer {
            return Err(CheckpointError::ChecksumMismatch);
        }
        let rest = &body[MAGIC.len()..];
        let nl = rest.iter().position(|&b| b == b'\n').ok_or(CheckpointError::Truncated)?;
        let header: Header = serde_json::from_slice(&rest[..nl])?;
        let mut payload = &rest[nl + 1..];
        let mut data = Vec::with_capacity(header.tensors.len());
        for t in &header.tensors {
            let n: usize = t.shape.iter().product();
            if payload.len() < n * 8 {
                return Err(CheckpointError::Truncated);
            }
            let (chunk, tail) = payload.split_at(n * 8);
            data.push(chunk.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect());
            payload = tail;
        }
        if !payload.is_empty() {
            return Err(CheckpointError::Truncated);
        }
        Ok(Self { kind: header.kind, meta: header.meta, tensors: header.tensors, data })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), CheckpointError> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Copies the stored values into `params`, which must match the stored
    /// names and shapes in order.
    pub fn apply_to<T: Scalar>(&self, kind: &str, params: &mut [&mut Param<T>]) -> Result<(), CheckpointError> {
        if self.kind != kind {
            return Err(CheckpointError::WrongKind { expected: kind.to_string(), found: self.kind.clone() });
        }
        if params.len() != self.tensors.len() {
            return Err(CheckpointError::TensorCount { expected: params.len(), found: self.tensors.len() });
        }
        for (i, (p, info)) in params.iter().zip(&self.tensors).enumerate() {
            if p.name != info.name || p.shape != info.shape {
                return Err(CheckpointError::Layout {
                    index: i,
                    expected: format!("{}{:?}", p.name, p.shape),
                    found: format!("{}{:?}", info.name, info.shape),
                });
            }
        }
        for (p, d) in params.iter_mut().zip(&self.data) {
            for (dst, &src) in p.data.iter_mut().zip(d) {
                *dst = T::lit(src);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let a = Param::<f64> { name: "a".into(), shape: vec![2, 2], data: vec![1.0, -2.0, 3.5, 0.25] };
        let b = Param::<f64> { name: "b".into(), shape: vec![3], data: vec![7.0, 8.0, 9.0] };
        Checkpoint::from_params("toy", BTreeMap::from([("dim".to_string(), 4)]), &[&a, &b])
    }

    #[test]
    fn round_trip() {
        let c = sample();
        assert_eq!(Checkpoint::from_bytes(&c.to_bytes()).unwrap(), c);
    }

    #[test]
    fn any_flipped_byte_is_detected() {
        let bytes = sample().to_bytes();
        for i in MAGIC.len()..bytes.len() {
            let mut bad = bytes.clone();
            bad[i] ^= 0x10;
            assert!(Checkpoint::from_bytes(&bad).is_err(), "byte {i}");
        }
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(CheckpointError::ChecksumMismatch)));
        assert!(matches!(Checkpoint::from_bytes(b"nope"), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn apply_checks_layout() {
        let c = sample();
        let mut a = Param::<f32>::zeros("a", &[2, 2]);
        let mut b = Param::<f32>::zeros("b", &[3]);
        c.apply_to("toy", &mut [&mut a, &mut b]).unwrap();
        assert_eq!(b.data, vec![7.0, 8.0, 9.0]);
        let mut wrong = Param::<f32>::zeros("b", &[4]);
        assert!(matches!(c.apply_to("toy", &mut [&mut a, &mut wrong]), Err(CheckpointError::Layout { index: 1, .. })));
        assert!(matches!(c.apply_to("other", &mut [&mut a, &mut b]), Err(CheckpointError::WrongKind { .. })));
    }
}
