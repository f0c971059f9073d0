//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! "LSEG" | version u32 = 1
//! in_channels u32 | out_channels u32 | depth u32 | base_channels u32 | input_size u32
//! parameter count u32
//! per parameter: name_len u16 | name (UTF-8) | rank u8 | dims u32 * rank | data f32 * prod(dims)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{ParamStore, UNet, UNetConfig};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const MAGIC: &[u8; 4] = b"LSEG";
const VERSION: u32 = 1;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| format_err(format!("{what} {v} does not fit in u32")))
}

/// Serializes a network; parameters are stored as 32-bit floats.
pub fn write_checkpoint<T: Scalar>(net: &UNet<T>) -> Result<Vec<u8>> {
    let cfg = net.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        cfg.in_channels,
        cfg.out_channels,
        cfg.depth,
        cfg.base_channels,
        cfg.input_size,
    ] {
        out.extend_from_slice(&to_u32(v, "config field")?.to_le_bytes());
    }
    out.extend_from_slice(&to_u32(net.params().len(), "parameter count")?.to_le_bytes());
    for (name, t) in net.params().iter() {
        let len = u16::try_from(name.len())
            .map_err(|_| format_err(format!("parameter name {name:?} is too long")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.shape().len())
            .map_err(|_| format_err(format!("parameter {name} has too many dimensions")))?;
        out.push(rank);
        for &d in t.shape() {
            out.extend_from_slice(&to_u32(d, "dimension")?.to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| format_err(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint and checks its parameters against its configuration.
pub fn read_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<UNet<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(format_err("bad checkpoint magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format_err(format!("unsupported checkpoint version {version}")));
    }
    let mut fields = [0usize; 5];
    for f in &mut fields {
        *f = r.u32()? as usize;
    }
    let [in_channels, out_channels, depth, base_channels, input_size] = fields;
    let cfg = UNetConfig {
        in_channels,
        out_channels,
        depth,
        base_channels,
        input_size,
    };
    cfg.validate()
        .map_err(|e| format_err(format!("invalid config in checkpoint: {e}")))?;

    let count = r.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| format_err("parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| format_err(format!("parameter {name} is too large")))?;
        let raw = r.take(n.checked_mul(4).ok_or_else(|| format_err("size overflow"))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        let t = Tensor::new(shape, data)
            .map_err(|e| format_err(format!("parameter {name}: {e}")))?;
        if params.get(&name).is_some() {
            return Err(format_err(format!("duplicate parameter {name}")));
        }
        params.insert(name, t);
    }
    if r.pos != bytes.len() {
        return Err(format_err(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }
    params
        .matches(&cfg)
        .map_err(|e| format_err(format!("checkpoint does not match its config: {e}")))?;
    UNet::from_parts(cfg, params)
}

pub fn save_checkpoint<T: Scalar>(net: &UNet<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_checkpoint(net)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<UNet<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
