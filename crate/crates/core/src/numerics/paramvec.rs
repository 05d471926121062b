//! Flat parameter vectors and their on-disk encoding.
//!
//! Layout of a `.fpv` file:
//!
//! | bytes | content |
//! |-------|---------|
//! | 4 | magic `FPV1` |
//! | 1 | dtype code, 4 = f32, 8 = f64 |
//! | 8 | element count, u64 little-endian |
//! | n·size | elements, little-endian |
//!
//! Matrices reuse the same encoding with a sidecar `<file>.json` holding
//! `{"rows": n, "cols": d}`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tensor::Tensor2;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FPV1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            4 => Ok(Dtype::F32),
            8 => Ok(Dtype::F64),
            c => Err(Error::Format(format!("unknown dtype code {c}"))),
        }
    }
}

/// Named slice of a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All trainable parameters as one flat vector, plus an optional shape registry.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segments: Vec<Segment>,
}

impl PartialEq for ParamVector {
    fn eq(&self, other: &Self) -> bool {
        self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, segments: Vec::new() }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_len(&self, other: &ParamVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch { expected: self.len(), got: other.len() });
        }
        Ok(())
    }

    /// `self - other`, element-wise.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_len(other)?;
        Ok(ParamVector::new(self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect()))
    }

    pub fn add_scaled(&mut self, other: &ParamVector, k: f64) -> Result<()> {
        self.check_len(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += k * b;
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Rounds every element through f32.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.values {
            *v = *v as f32 as f64;
        }
    }

    pub fn encode(&self, dtype: Dtype) -> Vec<u8> {
        let size = dtype.code() as usize;
        let mut buf = Vec::with_capacity(13 + self.len() * size);
        buf.extend_from_slice(MAGIC);
        buf.push(dtype.code());
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for &v in &self.values {
            match dtype {
                Dtype::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
                Dtype::F64 => buf.extend_from_slice(&v.to_le_bytes()),
            }
        }
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<(Self, Dtype)> {
        if bytes.len() < 13 || &bytes[..4] != MAGIC {
            return Err(Error::Format("missing FPV1 header".into()));
        }
        let dtype = Dtype::from_code(bytes[4])?;
        let count = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
        let size = dtype.code() as usize;
        let body = &bytes[13..];
        if body.len() != count * size {
            return Err(Error::Format(format!(
                "expected {} payload bytes, found {}",
                count * size,
                body.len()
            )));
        }
        let values = body
            .chunks_exact(size)
            .map(|c| match dtype {
                Dtype::F32 => f32::from_le_bytes(c.try_into().unwrap()) as f64,
                Dtype::F64 => f64::from_le_bytes(c.try_into().unwrap()),
            })
            .collect();
        Ok((ParamVector::new(values), dtype))
    }

    pub fn write(&self, path: &Path, dtype: Dtype) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.encode(dtype))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Ok(Self::decode(&bytes)?.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixShape {
    pub rows: usize,
    pub cols: usize,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_matrix(path: &Path, m: &Tensor2, dtype: Dtype) -> Result<()> {
    ParamVector::new(m.data().to_vec()).write(path, dtype)?;
    let shape = MatrixShape { rows: m.rows(), cols: m.cols() };
    fs::write(sidecar_path(path), serde_json::to_vec(&shape)?)?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<Tensor2> {
    let shape: MatrixShape = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    let pv = ParamVector::read(path)?;
    Tensor2::from_vec(shape.rows, shape.cols, pv.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let bytes = ParamVector::new(vec![1.0, -2.5]).encode(Dtype::F64);
        assert_eq!(&bytes[..4], b"FPV1");
        assert_eq!(bytes[4], 8);
        assert_eq!(&bytes[5..13], &2u64.to_le_bytes());
        assert_eq!(&bytes[13..21], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 13 + 16);
        let b32 = ParamVector::new(vec![1.0]).encode(Dtype::F32);
        assert_eq!(b32[4], 4);
        assert_eq!(&b32[13..], &1.0f32.to_le_bytes());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ParamVector::decode(b"XXXX").is_err());
        let mut b = ParamVector::new(vec![1.0]).encode(Dtype::F64);
        b[4] = 3;
        assert!(ParamVector::decode(&b).is_err());
        let mut b = ParamVector::new(vec![1.0]).encode(Dtype::F64);
        b.pop();
        assert!(ParamVector::decode(&b).is_err());
    }

    #[test]
    fn matrix_file_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.fpv");
        let m = Tensor2::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        write_matrix(&p, &m, Dtype::F64).unwrap();
        let side: serde_json::Value =
            serde_json::from_slice(&fs::read(sidecar_path(&p)).unwrap()).unwrap();
        assert_eq!(side, serde_json::json!({"rows": 2, "cols": 3}));
        assert_eq!(read_matrix(&p).unwrap(), m);
    }

    proptest! {
        #[test]
        fn f64_round_trip_is_bit_exact(v in prop::collection::vec(any::<f64>(), 0..64)) {
            let pv = ParamVector::new(v);
            let (back, dt) = ParamVector::decode(&pv.encode(Dtype::F64)).unwrap();
            prop_assert_eq!(dt, Dtype::F64);
            prop_assert_eq!(back, pv);
        }

        #[test]
        fn f32_round_trip_matches_quantize(v in prop::collection::vec(-1e6f64..1e6, 0..64)) {
            let pv = ParamVector::new(v);
            let (back, _) = ParamVector::decode(&pv.encode(Dtype::F32)).unwrap();
            let mut q = pv.clone();
            q.quantize_f32();
            prop_assert_eq!(back, q);
        }
    }
}
