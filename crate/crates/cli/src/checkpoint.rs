//! Versioned binary checkpoint: vocabulary, parameters and Adam state.
//!
//! Layout, all integers little-endian:
//! magic `CGRPOCKP`, u32 version, u32 symbol count, then per symbol a u32
//! byte length and UTF-8 bytes; u64 parameter blob length and the blob from
//! [`PolicyParams::to_bytes`]; u64 Adam step, u64 moment length, then the
//! first and second moments as f64 bit patterns.

use std::path::Path;

use cgrpo_core::policy::{AdamState, PolicyParams};
use cgrpo_core::vocab::Vocab;

use crate::data::write_atomic;
use crate::error::CliError;

const MAGIC: &[u8; 8] = b"CGRPOCKP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub vocab: Vocab,
    pub params: PolicyParams,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.vocab.len() as u32).to_le_bytes());
        for s in self.vocab.symbols() {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        let blob = self.params.to_bytes();
        out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
        out.extend_from_slice(&blob);
        out.extend_from_slice(&self.adam.t.to_le_bytes());
        out.extend_from_slice(&(self.adam.m.len() as u64).to_le_bytes());
        for x in self.adam.m.iter().chain(&self.adam.v) {
            out.extend_from_slice(&x.to_bits().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let n = r.u32()? as usize;
        let mut symbols = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let len = r.u32()? as usize;
            let s = std::str::from_utf8(r.take(len)?).map_err(|_| bad("symbol is not UTF-8"))?;
            symbols.push(s.to_string());
        }
        let vocab = Vocab::from_symbols(symbols).map_err(|e| bad(&e.to_string()))?;
        let blob_len = r.u64()? as usize;
        let params = PolicyParams::from_bytes(r.take(blob_len)?).map_err(|e| bad(&e.to_string()))?;
        if params.dims().vocab != vocab.len() {
            return Err(bad("parameter and vocabulary sizes disagree"));
        }
        let t = r.u64()?;
        let m_len = r.u64()? as usize;
        if m_len != params.as_slice().len() {
            return Err(bad("optimizer state does not match parameters"));
        }
        let read_vec = |r: &mut Reader<'_>| -> Result<Vec<f64>, CliError> {
            (0..m_len).map(|_| r.u64().map(f64::from_bits)).collect()
        };
        let m = read_vec(&mut r)?;
        let v = read_vec(&mut r)?;
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            vocab,
            params,
            adam: AdamState { m, v, t },
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes)
            .map_err(|e| CliError::Data(format!("{}: {}", path.display(), e)))
    }
}

fn bad(msg: &str) -> CliError {
    CliError::Data(format!("checkpoint: {msg}"))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64, CliError> {
        let mut a = [0u8; 8];
        a.copy_from_slice(self.take(8)?);
        Ok(u64::from_le_bytes(a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cgrpo_core::policy::init_params;

    #[test]
    fn round_trip_and_truncation() {
        let vocab = Vocab::build(["a", "b"]).unwrap();
        let params = init_params(&vocab, 3, 2, 4, 9).unwrap();
        let mut adam = AdamState::new(params.dims());
        adam.t = 5;
        adam.m[0] = 0.25;
        let ck = Checkpoint { vocab, params, adam };
        let bytes = ck.to_bytes();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"garbage!").is_err());
    }
}
