//! Versioned binary checkpoint of named tensors.
//!
//! Layout, all integers little-endian `u32`, all reals little-endian IEEE-754 `f64`:
//!
//! ```text
//! magic      8 bytes  "ENTRCKPT"
//! version    u32      1
//! n_meta     u32
//!   key      u32 length + UTF-8 bytes
//!   value    u32 length + UTF-8 bytes
//! n_tensors  u32
//!   name     u32 length + UTF-8 bytes
//!   rows     u32
//!   cols     u32
//!   values   rows * cols f64, row-major
//! ```

use std::io::{Read, Write};

use super::matrix::Matrix;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ENTRCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_u32(&mut w, self.meta.len())?;
        for (k, v) in &self.meta {
            write_str(&mut w, k)?;
            write_str(&mut w, v)?;
        }
        write_u32(&mut w, self.tensors.len())?;
        for (name, m) in &self.tensors {
            write_str(&mut w, name)?;
            write_u32(&mut w, m.rows())?;
            write_u32(&mut w, m.cols())?;
            let mut buf = Vec::with_capacity(m.len() * 8);
            for v in m.as_slice() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let n_meta = read_u32(&mut r)?;
        let mut meta = Vec::with_capacity(n_meta as usize);
        for _ in 0..n_meta {
            meta.push((read_str(&mut r)?, read_str(&mut r)?));
        }
        let n_tensors = read_u32(&mut r)?;
        let mut tensors = Vec::with_capacity(n_tensors as usize);
        for _ in 0..n_tensors {
            let name = read_str(&mut r)?;
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let mut buf = vec![0u8; rows * cols * 8];
            read_exact(&mut r, &mut buf)?;
            let data = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push((name, Matrix::from_vec(rows, cols, data)?));
        }
        Ok(Self { meta, tensors })
    }
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> std::io::Result<()> {
    let v = u32::try_from(v).map_err(|_| {
        std::io::Error::new(std::io::ErrorKind::InvalidInput, "length exceeds u32")
    })?;
    w.write_all(&v.to_le_bytes())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    write_u32(w, s.len())?;
    w.write_all(s.as_bytes())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint("invalid UTF-8 string".into()))
}
