//! Named-tensor checkpoints in a binary or JSON encoding.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "SGCKPT\0\0"
//! version  u32      1
//! n_meta   u32      then n_meta times: key (u32 len + utf8), value (u32 len + utf8)
//! n_tensor u32      then n_tensor times:
//!                     name (u32 len + utf8), rows u64, cols u64,
//!                     rows*cols f64 values, row-major
//! ```
//!
//! The JSON encoding is the serde form of [`Checkpoint`]; `serde_json`
//! prints shortest round-trip floats, so both encodings reload bit-exactly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HeadKind, Mlp};
use crate::analytic::LinearDecoder;
use crate::error::{Error, Result};
use crate::ndcore::DenseMatrix;

pub const MAGIC: &[u8; 8] = b"SGCKPT\0\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<Tensor>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(|| bad("length overflow"))?;
        if end > self.buf.len() {
            return Err(bad(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("invalid utf8 name"))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize, data: Vec<f64>) {
        self.tensors.push(Tensor { name: name.into(), rows, cols, data });
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| bad(format!("missing tensor {name}")))
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| bad(format!("missing metadata {key}")))
    }

    /// Copies every tensor and metadata entry of `other` under `prefix.`.
    pub fn merge_prefixed(&mut self, prefix: &str, other: Checkpoint) {
        for (k, v) in other.meta {
            self.meta.insert(format!("{prefix}.{k}"), v);
        }
        for t in other.tensors {
            self.tensors.push(Tensor { name: format!("{prefix}.{}", t.name), ..t });
        }
    }

    /// The entries stored under `prefix.`, with the prefix removed.
    pub fn extract_prefixed(&self, prefix: &str) -> Checkpoint {
        let p = format!("{prefix}.");
        Checkpoint {
            meta: self
                .meta
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&p).map(|k| (k.to_string(), v.clone())))
                .collect(),
            tensors: self
                .tensors
                .iter()
                .filter_map(|t| {
                    t.name.strip_prefix(&p).map(|n| Tensor { name: n.to_string(), ..t.clone() })
                })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            out.extend_from_slice(&(t.rows as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols as u64).to_le_bytes());
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mut ck = Checkpoint::default();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            ck.meta.insert(k, v);
        }
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let rows = usize::try_from(r.u64()?).map_err(|_| bad("rows overflow"))?;
            let cols = usize::try_from(r.u64()?).map_err(|_| bad("cols overflow"))?;
            let n = rows.checked_mul(cols).ok_or_else(|| bad("shape overflow"))?;
            let bytes = r.take(n.checked_mul(8).ok_or_else(|| bad("shape overflow"))?)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            ck.push(name, rows, cols, data);
        }
        if r.pos != buf.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(ck)
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_json()?)?)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Mlp {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.meta.insert("head".into(), self.head.name().into());
        for (l, (off, n_in, n_out)) in self.layers().enumerate() {
            let w = self.params[off..off + n_in * n_out].to_vec();
            let b = self.params[off + n_in * n_out..off + n_in * n_out + n_out].to_vec();
            ck.push(format!("layer{l}.weight"), n_out, n_in, w);
            ck.push(format!("layer{l}.bias"), 1, n_out, b);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let head = HeadKind::parse(ck.meta("head")?).ok_or_else(|| bad("unknown head kind"))?;
        let mut sizes = Vec::new();
        let mut params = Vec::new();
        for l in 0.. {
            let Ok(w) = ck.get(&format!("layer{l}.weight")) else { break };
            let b = ck.get(&format!("layer{l}.bias"))?;
            if l == 0 {
                sizes.push(w.cols);
            } else if sizes[l] != w.cols {
                return Err(bad(format!("layer {l} input width does not chain")));
            }
            if b.rows * b.cols != w.rows || w.data.len() != w.rows * w.cols {
                return Err(bad(format!("layer {l} shape mismatch")));
            }
            sizes.push(w.rows);
            params.extend_from_slice(&w.data);
            params.extend_from_slice(&b.data);
        }
        Mlp::from_params(&sizes, head, params)
    }
}

impl LinearDecoder {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        let put = |ck: &mut Checkpoint, name: &str, m: &DenseMatrix| {
            ck.push(name, m.rows(), m.cols(), m.as_slice().to_vec());
        };
        put(&mut ck, "wmu", self.wmu());
        if let Some(wa) = self.walpha() {
            put(&mut ck, "walpha", wa);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mat = |t: &Tensor| DenseMatrix::new(t.rows, t.cols, t.data.clone());
        let wmu = mat(ck.get("wmu")?)?;
        let walpha = match ck.get("walpha") {
            Ok(t) => Some(mat(t)?),
            Err(_) => None,
        };
        LinearDecoder::new(wmu, walpha)
    }
}
