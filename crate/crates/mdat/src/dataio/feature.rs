//! The `MDF1` feature-file format.
//!
//! ```text
//! offset  size  content
//! 0       4     magic "MDF1" (4D 44 46 31)
//! 4       4     rows, u32 little-endian
//! 8       4     cols, u32 little-endian
//! 12      4*r*c f32 little-endian values, row-major
//! ```
//!
//! Nothing follows the payload.

use std::fs;
use std::path::Path;

use mdat_core::Tensor;

use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"MDF1";
const HEADER: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FeatureError {
    #[error("bad magic {found:02X?}, expected 4D 44 46 31")]
    BadMagic { found: Vec<u8> },
    #[error("truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("{rows} x {cols} values overflow the addressable size")]
    Overflow { rows: u32, cols: u32 },
    #[error("empty shape {rows} x {cols}")]
    EmptyShape { rows: u32, cols: u32 },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("{extra} trailing bytes after the payload")]
    TrailingBytes { extra: u64 },
}

/// A `T x D` matrix of finite `f32` embeddings, `T, D >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    values: Tensor<f32>,
}

impl FeatureSequence {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(mdat_core::Error::Config(format!("feature sequence must be non-empty, got {rows} x {cols}")).into());
        }
        let values = Tensor::matrix(rows, cols, values)?;
        if let Some(i) = values.data().iter().position(|v| !v.is_finite()) {
            return Err(mdat_core::Error::Config(format!(
                "non-finite feature value at row {}, column {}",
                i / cols,
                i % cols
            ))
            .into());
        }
        Ok(Self { values })
    }

    pub fn from_tensor(t: Tensor<f32>) -> Result<Self> {
        let (r, c) = (t.rows(), t.cols());
        Self::new(r, c, t.into_data())
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.values
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.values
    }

    pub fn row(&self, r: usize) -> &[f32] {
        self.values.row(r)
    }
}

pub fn encode_feature(seq: &FeatureSequence) -> Vec<u8> {
    let data = seq.tensor().data();
    let mut out = Vec::with_capacity(HEADER + 4 * data.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(seq.len() as u32).to_le_bytes());
    out.extend_from_slice(&(seq.dim() as u32).to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_feature(bytes: &[u8]) -> Result<FeatureSequence, FeatureError> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(FeatureError::BadMagic {
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if bytes.len() < HEADER {
        return Err(FeatureError::Truncated {
            expected: HEADER as u64,
            actual: bytes.len() as u64,
        });
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let (rows, cols) = (word(4), word(8));
    if rows == 0 || cols == 0 {
        return Err(FeatureError::EmptyShape { rows, cols });
    }
    let payload = (rows as usize)
        .checked_mul(cols as usize)
        .and_then(|n| n.checked_mul(4))
        .filter(|&n| n <= isize::MAX as usize - HEADER)
        .ok_or(FeatureError::Overflow { rows, cols })?;
    let expected = (HEADER + payload) as u64;
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(FeatureError::Truncated { expected, actual });
    }
    if actual > expected {
        return Err(FeatureError::TrailingBytes { extra: actual - expected });
    }
    let cols = cols as usize;
    let mut values = Vec::with_capacity(payload / 4);
    for (i, chunk) in bytes[HEADER..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(FeatureError::NonFinite { row: i / cols, col: i % cols });
        }
        values.push(v);
    }
    let values = Tensor::matrix(rows as usize, cols, values).expect("length checked above");
    Ok(FeatureSequence { values })
}

pub fn write_feature_file(seq: &FeatureSequence, path: &Path) -> Result<()> {
    fs::write(path, encode_feature(seq)).map_err(Error::io(path))
}

pub fn read_feature_file(path: &Path) -> Result<FeatureSequence> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    decode_feature(&bytes).map_err(|source| Error::Feature {
        path: path.to_path_buf(),
        source,
    })
}

/// Crops to the first `target` rows or appends zero rows up to `target`.
pub fn align_length(seq: &FeatureSequence, target: usize) -> FeatureSequence {
    assert!(target >= 1, "target length must be positive");
    let (t, d) = (seq.len(), seq.dim());
    if t == target {
        return seq.clone();
    }
    let mut data = seq.tensor().data()[..t.min(target) * d].to_vec();
    data.resize(target * d, 0.0);
    FeatureSequence {
        values: Tensor::matrix(target, d, data).expect("aligned shape"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(rows: usize, cols: usize) -> FeatureSequence {
        let data = (0..rows * cols).map(|i| i as f32 * 0.5 - 1.0).collect();
        FeatureSequence::new(rows, cols, data).unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode_feature(&seq(2, 3));
        assert_eq!(&bytes[..12], &[0x4D, 0x44, 0x46, 0x31, 2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(bytes.len(), 12 + 24);
        assert_eq!(decode_feature(&bytes).unwrap(), seq(2, 3));
    }

    #[test]
    fn parse_errors_are_distinct() {
        let good = encode_feature(&seq(2, 3));
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_feature(&bad), Err(FeatureError::BadMagic { .. })));
        assert!(matches!(decode_feature(b"MD"), Err(FeatureError::BadMagic { .. })));
        assert!(matches!(
            decode_feature(&good[..20]),
            Err(FeatureError::Truncated { expected: 36, actual: 20 })
        ));
        assert!(matches!(decode_feature(&good[..8]), Err(FeatureError::Truncated { .. })));
        let mut long = good.clone();
        long.push(0);
        assert_eq!(decode_feature(&long), Err(FeatureError::TrailingBytes { extra: 1 }));
        let mut huge = good.clone();
        huge[4..12].copy_from_slice(&[0xFF; 8]);
        assert!(matches!(decode_feature(&huge), Err(FeatureError::Overflow { .. })));
        let mut nan = good.clone();
        nan[12 + 4 * 4..12 + 4 * 5].copy_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(decode_feature(&nan), Err(FeatureError::NonFinite { row: 1, col: 1 }));
        let mut empty = good;
        empty[4..8].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_feature(&empty), Err(FeatureError::EmptyShape { .. })));
    }

    #[test]
    fn align_pads_and_crops() {
        let s = seq(3, 2);
        let padded = align_length(&s, 5);
        assert_eq!(padded.len(), 5);
        assert_eq!(&padded.tensor().data()[..6], s.tensor().data());
        assert!(padded.tensor().data()[6..].iter().all(|&v| v == 0.0));

        let long = seq(7, 2);
        let cropped = align_length(&long, 5);
        assert_eq!(cropped.tensor().data(), &long.tensor().data()[..10]);
        assert_eq!(align_length(&s, 3), s);
    }

    #[test]
    fn constructor_rejects_bad_values() {
        assert!(FeatureSequence::new(0, 3, vec![]).is_err());
        assert!(FeatureSequence::new(1, 2, vec![1.0, f32::INFINITY]).is_err());
        assert!(FeatureSequence::new(1, 2, vec![1.0]).is_err());
    }
}
