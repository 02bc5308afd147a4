//! Binary checkpoint format.
//!
//! ```text
//! "MTSE" | version u32 | meta length u32 | meta JSON
//! repeated: name length u32 | name | rank u32 | dims u32×rank | f64×prod(dims)
//! ```
//!
//! All integers and floats are little-endian. Parameter records are named
//! `param/<tensor>`; training state uses the reserved prefixes `adam.m/`,
//! `adam.v/`, `adam.t`, `rng/` and `stream/`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MTSE";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl Record {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), values.len());
        Record { name: name.into(), dims, values }
    }

    pub fn vector(name: impl Into<String>, values: Vec<f64>) -> Self {
        let n = values.len();
        Record::new(name, vec![n], values)
    }
}

fn push_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in a u32 field")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(meta: &[u8], records: &[Record]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    push_u32(&mut out, meta.len())?;
    out.extend_from_slice(meta);
    for r in records {
        push_u32(&mut out, r.name.len())?;
        out.extend_from_slice(r.name.as_bytes());
        push_u32(&mut out, r.dims.len())?;
        for &d in &r.dims {
            push_u32(&mut out, d)?;
        }
        for v in &r.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("checkpoint truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

/// Splits a checkpoint into its meta JSON and records.
pub fn decode(bytes: &[u8]) -> Result<(Vec<u8>, Vec<Record>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic bytes)".into()));
    }
    let version = r.u32("version")? as u32;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version: expected {VERSION}, found {version}"
        )));
    }
    let meta_len = r.u32("meta length")?;
    let meta = r.take(meta_len, "meta")?.to_vec();
    let mut records = Vec::new();
    while r.pos < bytes.len() {
        let name_len = r.u32("record name length")?;
        let name = std::str::from_utf8(r.take(name_len, "record name")?)
            .map_err(|_| Error::Format("record name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")?;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dims")?);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("record {name} is too large")))?;
        let raw = r.take(
            count.checked_mul(8).ok_or_else(|| Error::Format(format!("record {name} is too large")))?,
            &name,
        )?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        records.push(Record { name, dims, values });
    }
    Ok((meta, records))
}

/// Writes through a temporary file and renames it into place, so an
/// interrupted save never leaves a partial checkpoint at `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = PathBuf::from(path);
    let mut name = tmp.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    tmp.set_file_name(name);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<(Vec<u8>, Vec<Record>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
