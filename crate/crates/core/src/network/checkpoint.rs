//! Binary checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "LSEGCKPT"
//! version    u32       1
//! digest     32 bytes  SHA-256 of the config text
//! config     u32 length + UTF-8 TOML of the NetworkConfig
//! count      u32       number of records
//! record     u16 name length + name, u8 rank, rank × u32 dims,
//!            prod(dims) × f32 values, row-major
//! ```
//!
//! Records cover every parameter including batch-norm running statistics,
//! in the network's fixed parameter order.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Network, NetworkConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"LSEGCKPT";
pub const VERSION: u32 = 1;

fn fmt_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

pub fn config_digest(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

pub fn to_bytes<T: Scalar>(net: &Network<T>) -> Vec<u8> {
    let text = net.config.to_toml();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&config_digest(&text));
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    let params = net.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.shape.len() as u8);
        for &d in &p.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &p.value {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return fmt_err("checkpoint truncated");
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }
}

pub fn from_bytes<T: Scalar>(buf: &[u8]) -> Result<Network<T>> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8)? != MAGIC {
        return fmt_err("not a checkpoint (bad magic)");
    }
    let version = c.u32()?;
    if version != VERSION {
        return fmt_err(format!("unsupported checkpoint version {version}"));
    }
    let digest: [u8; 32] = c.take(32)?.try_into().expect("32 bytes");
    let len = c.u32()? as usize;
    let text = std::str::from_utf8(c.take(len)?).map_err(|e| Error::Format(e.to_string()))?;
    if config_digest(text) != digest {
        return fmt_err("config digest mismatch");
    }
    let config = NetworkConfig::from_toml(text)?;
    let mut net = Network::new(config, 0)?;
    let count = c.u32()? as usize;
    let mut params = net.params_mut();
    if count != params.len() {
        return fmt_err(format!(
            "checkpoint has {count} records, network has {}",
            params.len()
        ));
    }
    for p in params.iter_mut() {
        let nlen = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(nlen)?).map_err(|e| Error::Format(e.to_string()))?;
        if name != p.name {
            return fmt_err(format!("expected record '{}', found '{}'", p.name, name));
        }
        let rank = c.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32()? as usize);
        }
        if shape != p.shape {
            return fmt_err(format!(
                "record '{}' has shape {:?}, expected {:?}",
                name, shape, p.shape
            ));
        }
        for v in p.value.iter_mut() {
            let f = f32::from_le_bytes(c.take(4)?.try_into().expect("4 bytes"));
            *v = T::lit(f as f64);
        }
    }
    if c.pos != buf.len() {
        return fmt_err("trailing bytes after the last record");
    }
    Ok(net)
}

pub fn save<T: Scalar>(net: &Network<T>, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&to_bytes(net))?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<Network<T>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    from_bytes(&buf)
}
