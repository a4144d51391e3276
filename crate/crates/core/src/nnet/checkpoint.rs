//! Single-file checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   b"SPANDEC\0"
//! version      u32       FORMAT_VERSION
//! header_len   u64       byte length of the JSON header
//! header       JSON      {"meta": <caller data>, "params": [{name, group, kind, rows, cols}, ...]}
//! data         f64 LE    every parameter, row-major, in header order
//! ```
//!
//! Values are stored as raw IEEE-754 bits so a load reproduces them exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::params::{ParamGroup, ParamKind, ParamStore};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SPANDEC\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ParamHeader {
    name: String,
    group: ParamGroup,
    kind: ParamKind,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    params: Vec<ParamHeader>,
}

pub fn write_checkpoint<W: Write>(mut w: W, meta: &serde_json::Value, store: &ParamStore) -> Result<()> {
    let header = Header {
        meta: meta.clone(),
        params: store
            .entries()
            .map(|(info, t)| ParamHeader {
                name: info.name.clone(),
                group: info.group,
                kind: info.kind,
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, t) in store.entries() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(serde_json::Value, ParamStore)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let header_len = u64::from_le_bytes(u64buf) as usize;
    let mut json = vec![0u8; header_len];
    r.read_exact(&mut json)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&json)?;
    let mut store = ParamStore::new();
    for p in header.params {
        let mut data = vec![0.0; p.rows * p.cols];
        for v in &mut data {
            r.read_exact(&mut u64buf)
                .map_err(|_| Error::Checkpoint(format!("truncated data for `{}`", p.name)))?;
            *v = f64::from_le_bytes(u64buf);
        }
        store.insert(p.name, p.group, p.kind, Tensor::from_vec(p.rows, p.cols, data)?)?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameter data".into()));
    }
    Ok((header.meta, store))
}

pub fn save(path: impl AsRef<Path>, meta: &serde_json::Value, store: &ParamStore) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    write_checkpoint(BufWriter::new(file), meta, store)
}

pub fn load(path: impl AsRef<Path>) -> Result<(serde_json::Value, ParamStore)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    read_checkpoint(BufReader::new(file))
}
