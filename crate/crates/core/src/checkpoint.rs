//! Binary checkpoints.
//!
//! ```text
//! "AGGCN1"
//! u64 LE  header length, then the header as UTF-8 JSON (run config, vocabulary, parameter table)
//! u64 LE  parameter count
//! per parameter, in registration order:
//!   u64 LE rows, u64 LE cols, rows*cols f64 LE values (row-major)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::model::{AggcnModel, ModelConfig};
use crate::numerics::{Matrix, Rng};

pub const MAGIC: &[u8; 6] = b"AGGCN1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: RunConfig,
    pub vocab: Vec<String>,
    pub params: Vec<ParamEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub values: Vec<Matrix>,
}

pub fn encode_checkpoint(model: &AggcnModel, config: &RunConfig) -> Vec<u8> {
    let mut config = config.clone();
    config.model = model.config.clone();
    let header = Header {
        config,
        vocab: model.vocab.tokens().to_vec(),
        params: model
            .store
            .iter()
            .map(|t| ParamEntry {
                name: t.name.clone(),
                rows: t.value.rows(),
                cols: t.value.cols(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header always serializes");
    let mut out = Vec::with_capacity(json.len() + 8 * model.store.num_scalars() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(model.store.len() as u64).to_le_bytes());
    for t in model.store.iter() {
        out.extend_from_slice(&(t.value.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.value.cols() as u64).to_le_bytes());
        for x in t.value.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &AggcnModel, config: &RunConfig) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model, config)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize> {
        let b = self.take(8)?;
        let v = u64::from_le_bytes(b.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("length {v} too large")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not an AGGCN1 checkpoint".into()));
    }
    let len = r.u64()?;
    let header: Header = serde_json::from_slice(r.take(len)?)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let count = r.u64()?;
    if count != header.params.len() {
        return Err(Error::Checkpoint(format!(
            "header lists {} parameters, body has {count}",
            header.params.len()
        )));
    }
    let mut values = Vec::with_capacity(count);
    for entry in &header.params {
        let (rows, cols) = (r.u64()?, r.u64()?);
        if (rows, cols) != (entry.rows, entry.cols) {
            return Err(Error::Checkpoint(format!(
                "{}: body shape {rows}x{cols} disagrees with header {}x{}",
                entry.name, entry.rows, entry.cols
            )));
        }
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Checkpoint("parameter too large".into()))?;
        let data = r
            .take(n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        values.push(Matrix::from_vec(rows, cols, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { header, values })
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}

impl Checkpoint {
    /// Rebuilds the stored model.
    pub fn model(&self) -> Result<AggcnModel> {
        self.model_with(&self.header.config.model)
    }

    /// Builds a model from `config` and fills it with the stored values,
    /// failing when any parameter name or shape disagrees.
    pub fn model_with(&self, config: &ModelConfig) -> Result<AggcnModel> {
        let vocab = Vocab::new(self.header.vocab.iter().cloned());
        if vocab.tokens() != self.header.vocab.as_slice() {
            return Err(Error::Checkpoint("vocabulary is not in canonical order".into()));
        }
        let table = Matrix::zeros(vocab.len(), config.d_word);
        let mut model = AggcnModel::new(config.clone(), vocab, Some(table), &Rng::new(0))
            .map_err(|e| Error::Checkpoint(format!("config does not fit checkpoint: {e}")))?;
        if model.store.len() != self.values.len() {
            return Err(Error::Checkpoint(format!(
                "model has {} parameters, checkpoint has {}",
                model.store.len(),
                self.values.len()
            )));
        }
        for ((t, entry), v) in model.store.iter_mut().zip(&self.header.params).zip(&self.values) {
            if t.name != entry.name || t.value.shape() != v.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch: model {} {:?}, checkpoint {} {:?}",
                    t.name,
                    t.value.shape(),
                    entry.name,
                    v.shape()
                )));
            }
            t.value = v.clone();
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(d: usize) -> AggcnModel {
        let config = ModelConfig {
            n_heads: 2,
            d,
            d_word: 4,
            sublayers: vec![2],
            labels: vec!["a".into(), "b".into()],
            ..Default::default()
        };
        AggcnModel::new(config, Vocab::new(["x", "y"]), None, &Rng::new(5)).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model(4);
        let cfg = RunConfig::default();
        let bytes = encode_checkpoint(&m, &cfg);
        assert_eq!(&bytes[..6], b"AGGCN1");
        let ck = decode_checkpoint(&bytes).unwrap();
        let back = ck.model().unwrap();
        for (a, b) in m.store.iter().zip(back.store.iter()) {
            assert_eq!(a.value, b.value);
            assert_eq!(a.name, b.name);
        }
        assert_eq!(back.vocab, m.vocab);
        assert_eq!(encode_checkpoint(&back, &cfg), bytes);
    }

    #[test]
    fn shape_audit_rejects_other_width() {
        let bytes = encode_checkpoint(&model(4), &RunConfig::default());
        let ck = decode_checkpoint(&bytes).unwrap();
        let mut other = ck.header.config.model.clone();
        other.d = 6;
        assert!(matches!(ck.model_with(&other), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn corrupt_bytes_rejected() {
        let bytes = encode_checkpoint(&model(4), &RunConfig::default());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_checkpoint(b"NOTACK").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
    }
}
