//! The `MDM1` checkpoint container.
//!
//! ```text
//! "MDM1"                     magic
//! u32 version                currently 1
//! u32 n, n bytes             JSON header {model: {kind, config}, vocab, seq_len}
//! u32 count                  number of tensors
//! per tensor:
//!   u32 n, n bytes           UTF-8 name
//!   u32 rank, rank x u32     dims
//!   f32 x prod(dims)         payload, row-major
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::{Path, PathBuf};

use mdat_core::{Model, ParamSet, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::LabelVocabulary;
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"MDM1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub model: Model,
    pub vocab: LabelVocabulary,
    /// Length both modalities are aligned to before the forward pass.
    pub seq_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamSet<f32>,
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.header).map_err(|e| Error::Report(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, len_u32(json.len())?);
        out.extend_from_slice(&json);
        put_u32(&mut out, len_u32(self.params.len())?);
        for (name, t) in self.params.iter() {
            put_u32(&mut out, len_u32(name.len())?);
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, len_u32(t.shape().len())?);
            for &d in t.shape() {
                put_u32(&mut out, len_u32(d)?);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses a checkpoint and checks its tensors against the layout the
    /// embedded model configuration expects.
    pub fn decode(bytes: &[u8]) -> Result<Self, String> {
        let (header, params) = decode_parts(bytes)?;
        header.model.validate().map_err(|e| e.to_string())?;
        let layout: ParamSet<f32> = header
            .model
            .init_params(&mut ChaCha8Rng::seed_from_u64(0))
            .map_err(|e| e.to_string())?;
        params.check_layout(&layout).map_err(|e| e.to_string())?;
        if header.vocab.len() != header.model.n_classes() {
            return Err(format!(
                "vocabulary has {} labels but the model has {} classes",
                header.vocab.len(),
                header.model.n_classes()
            ));
        }
        Ok(Self { header, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(Error::io(path))?;
        Self::decode(&bytes).map_err(|message| checkpoint_error(path, message))
    }
}

fn checkpoint_error(path: &Path, message: String) -> Error {
    Error::Checkpoint {
        path: PathBuf::from(path),
        message,
    }
}

/// Header and tensors without layout validation; used by `inspect`.
pub fn decode_parts(bytes: &[u8]) -> Result<(CheckpointHeader, ParamSet<f32>), String> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(format!("bad magic {magic:02X?}, expected \"MDM1\""));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let n = r.u32()? as usize;
    let header: CheckpointHeader =
        serde_json::from_slice(r.take(n)?).map_err(|e| format!("header: {e}"))?;
    let count = r.u32()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(n)?).map_err(|e| format!("tensor name: {e}"))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= r.remaining() / 4)
            .ok_or_else(|| format!("truncated: tensor {name:?} with shape {shape:?} exceeds the file"))?;
        let data = r
            .take(numel * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| e.to_string())?;
        if params.index_of(name).is_some() {
            return Err(format!("duplicate tensor {name:?}"));
        }
        params.push(name, t);
    }
    if r.remaining() != 0 {
        return Err(format!("{} trailing bytes", r.remaining()));
    }
    Ok((header, params))
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Report(format!("size {n} does not fit the checkpoint format")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        if n > self.remaining() {
            return Err(format!("truncated at byte {}: need {n} more, have {}", self.pos, self.remaining()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mdat_core::baseline::BaselineConfig;
    use mdat_core::mdat::MdatConfig;

    fn sample(model: Model) -> Checkpoint {
        let params = model.init_params(&mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        Checkpoint {
            header: CheckpointHeader {
                model,
                vocab: LabelVocabulary::four_class(),
                seq_len: 6,
            },
            params,
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        for model in [Model::Mdat(MdatConfig::tiny()), Model::Baseline(BaselineConfig::tiny())] {
            let ck = sample(model);
            let bytes = ck.encode().unwrap();
            let back = Checkpoint::decode(&bytes).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.encode().unwrap(), bytes);
        }
    }

    #[test]
    fn corruption_is_reported() {
        let bytes = sample(Model::Mdat(MdatConfig::tiny())).encode().unwrap();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).unwrap_err().contains("truncated"));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::decode(&extra).unwrap_err().contains("trailing"));
        let mut magic = bytes.clone();
        magic[3] = b'0';
        assert!(Checkpoint::decode(&magic).unwrap_err().contains("magic"));
        let mut version = bytes;
        version[4] = 2;
        assert!(Checkpoint::decode(&version).unwrap_err().contains("version"));
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let mut ck = sample(Model::Mdat(MdatConfig::tiny()));
        let mut other = MdatConfig::tiny();
        other.d_ff = 8;
        ck.header.model = Model::Mdat(other);
        assert!(Checkpoint::decode(&ck.encode().unwrap()).is_err());
    }
}
