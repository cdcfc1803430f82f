//! Binary parameter files.
//!
//! Layout: `GENC`, a version byte, then until end of file one record per
//! tensor: `u32` name length, UTF-8 name, `u32` rank, `u64` per dimension,
//! and the values as little-endian `f64`. All integers are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{GenError, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"GENC";
const VERSION: u8 = 1;

pub fn encode(tensors: &[(String, &Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(buf: &[u8]) -> std::result::Result<Vec<(String, Tensor)>, String> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let version = r.take(1)?[0];
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let mut out = Vec::new();
    while r.pos < buf.len() {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| "tensor name is not UTF-8".to_string())?
            .to_string();
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u64()).collect::<std::result::Result<Vec<_>, _>>()?;
        let (rows, cols) = match dims[..] {
            [n] => (1, n as usize),
            [a, b] => (a as usize, b as usize),
            _ => return Err(format!("{name}: unsupported rank {rank}")),
        };
        let count = rows.checked_mul(cols).ok_or_else(|| format!("{name}: size overflow"))?;
        let bytes = r.take(count.checked_mul(8).ok_or_else(|| format!("{name}: size overflow"))?)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(rows, cols, data).map_err(|e| e.to_string())?;
        out.push((name, t));
    }
    Ok(out)
}

pub fn write_checkpoint(path: &Path, tensors: &[(String, &Tensor)]) -> Result<()> {
    fs::write(path, encode(tensors)).map_err(|e| GenError::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let buf = fs::read(path).map_err(|e| GenError::io(path, e))?;
    decode(&buf).map_err(|msg| GenError::file(path, msg))
}
