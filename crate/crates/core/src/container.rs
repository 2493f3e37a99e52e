//! Binary container of named numeric arrays.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! bytes 0..8   magic  b"NARRAYS1"
//! bytes 8..16  u64    header length in bytes
//! bytes 16..   JSON   header
//! then         f64 LE payload
//! ```
//!
//! The JSON header is `{"meta": <object>, "arrays": [{"name", "rows",
//! "cols", "offset"}]}` where `offset` counts f64 elements into the
//! payload. Arrays are stored row-major. Human-readable sidecar metadata
//! rides in `meta`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"NARRAYS1";

#[derive(Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
}

/// Writes named arrays plus a metadata object. Array order is preserved.
pub fn write_arrays(
    path: &Path,
    arrays: &[(String, Tensor)],
    meta: &serde_json::Value,
) -> Result<()> {
    let mut entries = Vec::with_capacity(arrays.len());
    let mut offset = 0usize;
    for (name, t) in arrays {
        entries.push(ArrayEntry {
            name: name.clone(),
            rows: t.rows(),
            cols: t.cols(),
            offset,
        });
        offset += t.len();
    }
    let header = Header {
        meta: meta.clone(),
        arrays: entries,
    };
    let header_bytes = serde_json::to_vec(&header)?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for (_, t) in arrays {
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a container back as `(name -> tensor, meta)`.
pub fn read_arrays(path: &Path) -> Result<(BTreeMap<String, Tensor>, serde_json::Value)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::BadContainer(format!(
            "bad magic in {}",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::BadContainer(format!("bad header: {e}")))?;

    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() % 8 != 0 {
        return Err(Error::BadContainer("payload not a multiple of 8".into()));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut out = BTreeMap::new();
    for e in &header.arrays {
        let n = e.rows * e.cols;
        let end = e.offset + n;
        if end > values.len() {
            return Err(Error::BadContainer(format!(
                "array {} overruns payload",
                e.name
            )));
        }
        out.insert(
            e.name.clone(),
            Tensor::from_vec(e.rows, e.cols, values[e.offset..end].to_vec()),
        );
    }
    Ok((out, header.meta))
}
