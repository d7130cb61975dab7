//! Parameter checkpoints.
//!
//! Binary layout (all integers little-endian `u32`):
//!
//! ```text
//! magic    8 bytes  "FDCKPT01"
//! count    u32      number of tensors
//! table    count x { name_len u32, name utf-8, rank u32, dims u32 x rank }
//! data     f32 LE values of every tensor, concatenated in table order
//! ```
//!
//! The JSON manifest lists the same table with each tensor's element offset
//! into the data section.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Parameterized;

pub const MAGIC: &[u8; 8] = b"FDCKPT01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Element offset into the data section.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
}

/// Serialize parameters to `(binary, manifest)`.
pub fn encode<P: Parameterized + Clone>(params: &P) -> (Vec<u8>, Manifest) {
    let mut copy = params.clone();
    let mut table = Vec::new();
    let mut data = Vec::new();
    let mut offset = 0;
    copy.visit_params("", &mut |name, shape, values| {
        table.push(TensorEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset,
        });
        offset += values.len();
        data.extend(values.iter().map(|&v| v as f32));
    });
    let mut out = Vec::with_capacity(16 + data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(table.len() as u32).to_le_bytes());
    for t in &table {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let manifest = Manifest {
        format: String::from_utf8_lossy(MAGIC).into_owned(),
        dtype: "f32le".into(),
        tensors: table,
    };
    (out, manifest)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Load tensors into `params`; names and shapes must match exactly.
pub fn decode_into<P: Parameterized>(bytes: &[u8], params: &mut P) -> Result<()> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let count = r.u32()?;
    let mut table = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let n = r.u32()?;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?
            .to_string();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        table.push((name, shape));
    }
    let mut next = 0;
    let mut failure = None;
    params.visit_params("", &mut |name, shape, values| {
        if failure.is_some() {
            return;
        }
        let Some((tname, tshape)) = table.get(next) else {
            failure = Some(format!("checkpoint has no tensor for {name}"));
            return;
        };
        next += 1;
        if tname != name || tshape.as_slice() != shape {
            failure = Some(format!("expected {name} {shape:?}, found {tname} {tshape:?}"));
            return;
        }
        match r.take(values.len() * 4) {
            Ok(raw) => {
                for (v, c) in values.iter_mut().zip(raw.chunks_exact(4)) {
                    *v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
                }
            }
            Err(e) => failure = Some(e.to_string()),
        }
    });
    if let Some(msg) = failure {
        return Err(Error::Checkpoint(msg));
    }
    if next != table.len() || r.pos != bytes.len() {
        return Err(Error::Checkpoint("checkpoint has extra tensors or trailing data".into()));
    }
    Ok(())
}

/// Write `<stem>.bin` and `<stem>.json` into `dir`.
pub fn save<P: Parameterized + Clone>(params: &P, dir: &Path, stem: &str) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    let (bin, manifest) = encode(params);
    let bin_path = dir.join(format!("{stem}.bin"));
    let json_path = dir.join(format!("{stem}.json"));
    std::fs::write(&bin_path, bin).map_err(|e| Error::io(&bin_path, e))?;
    std::fs::write(&json_path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&json_path, e))?;
    Ok((bin_path, json_path))
}

pub fn load_into<P: Parameterized>(path: &Path, params: &mut P) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_into(&bytes, params)
}
