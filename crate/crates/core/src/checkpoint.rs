//! Parameter checkpoint container.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "DSNCKPT1"
//! count    u32
//! record*  { name_len u32, name utf-8, rank u32, dims u64 * rank,
//!            values f64 * prod(dims) }
//! ```
//!
//! A plain-text index (`<name>\t<shape>\t<byte offset of values>`) is written
//! next to the binary file. Values are stored as raw `f64` bits, so a
//! save/load cycle is bit-exact.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::layers::ParameterSet;
use crate::scalar::Real;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"DSNCKPT1";

pub fn index_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".index");
    PathBuf::from(os)
}

/// Serializes named tensors; returns the binary blob and its text index.
pub fn encode<T: Real>(records: &[(String, &Tensor<T>)]) -> (Vec<u8>, String) {
    let mut bin = Vec::new();
    let mut index = String::new();
    bin.extend_from_slice(MAGIC);
    bin.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, t) in records {
        bin.extend_from_slice(&(name.len() as u32).to_le_bytes());
        bin.extend_from_slice(name.as_bytes());
        bin.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            bin.extend_from_slice(&(d as u64).to_le_bytes());
        }
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        index.push_str(&format!("{name}\t{}\t{}\n", dims.join("x"), bin.len()));
        for v in t.data() {
            bin.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    (bin, index)
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
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let count = r.u32()?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("name is not utf-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("oversized".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let t = Tensor::new(&shape, data)
            .map_err(|e| Error::Checkpoint(format!("record `{name}`: {e}")))?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(out)
}

pub fn save<T: Real>(path: &Path, params: &ParameterSet<T>) -> Result<()> {
    let (bin, index) = encode(&params.named());
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::File::create(path)?.write_all(&bin)?;
    fs::write(index_path(path), index)?;
    Ok(())
}

pub fn load<T: Real>(path: &Path) -> Result<ParameterSet<T>> {
    let bytes = fs::read(path)?;
    ParameterSet::from_named(decode(&bytes)?)
}
