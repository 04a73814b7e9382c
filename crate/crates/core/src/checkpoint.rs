//! Binary weight container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   b"LMDW"
//! version u32 (currently 1)
//! count   u32
//! count × {
//!     name_len u32, name (UTF-8),
//!     rank u32, dims u64 × rank,
//!     values f64 × product(dims)
//! }
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Model, ModelConfig, NamedParam};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"LMDW";
pub const VERSION: u32 = 1;

pub fn encode<T: Real>(params: &[NamedParam<T>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.tensor.shape().len() as u32).to_le_bytes());
        for d in p.tensor.shape() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in p.tensor.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Decode {
                offset: self.pos,
                msg: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<Vec<NamedParam<T>>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Decode {
            offset: 0,
            msg: "bad magic, not a weight container".into(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Decode {
            offset: 4,
            msg: format!("unsupported container version {version}"),
        });
    }
    let count = r.u32("parameter count")?;
    let mut params = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|e| Error::Decode {
                offset: at,
                msg: format!("parameter name is not UTF-8: {e}"),
            })?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("dimension")? as usize);
        }
        let numel: usize = shape.iter().product();
        let at = r.pos;
        let raw = r.take(numel.checked_mul(8).ok_or_else(|| Error::Decode {
            offset: at,
            msg: "dimension overflow".into(),
        })?, "values")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        params.push(NamedParam {
            name,
            tensor: Tensor::new(shape, data)?,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Decode {
            offset: r.pos,
            msg: "trailing bytes after last parameter".into(),
        });
    }
    Ok(params)
}

/// Writes atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save<T: Real>(model: &Model<T>, path: &Path) -> Result<()> {
    write_atomic(path, &encode(model.params()))
}

pub fn load<T: Real>(config: ModelConfig, path: &Path) -> Result<Model<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Model::from_params(config, decode(&bytes)?)
}
