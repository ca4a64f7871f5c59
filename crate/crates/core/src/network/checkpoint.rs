//! Binary checkpoint container.
//!
//! ```text
//! "TBNCKPT1"
//! u32 entry count
//! per entry: u32 name length, name, u32 rank, rank × u64 dims, u8 dtype, u64 offset
//! raw little-endian buffers
//! ```
//! dtype 0 is f32, 1 is f64 and 2 is a UTF-8 JSON blob (the network config,
//! stored under `meta.config`). Offsets are absolute.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Tensor};

use super::{Model, NetworkConfig};

pub const MAGIC: &[u8; 8] = b"TBNCKPT1";
const META: &str = "meta.config";

struct Entry<'a> {
    name: String,
    dims: Vec<u64>,
    dtype: u8,
    bytes: std::borrow::Cow<'a, [u8]>,
}

fn dtype_code(d: DType) -> u8 {
    match d {
        DType::F32 => 0,
        DType::F64 => 1,
    }
}

fn le_bytes<T: Scalar>(data: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() * T::DTYPE.size());
    for v in data {
        v.write_le(&mut out);
    }
    out
}

/// Serializes parameters, normalization buffers and the config.
pub fn to_bytes<T: Scalar>(model: &Model<T>) -> Vec<u8> {
    let mut entries = Vec::new();
    let config = serde_json::to_vec(&model.cfg).expect("config serializes");
    entries.push(Entry {
        name: META.into(),
        dims: vec![config.len() as u64],
        dtype: 2,
        bytes: config.into(),
    });
    for p in model.store.params() {
        entries.push(Entry {
            name: p.name.clone(),
            dims: p.tensor.shape().iter().map(|&d| d as u64).collect(),
            dtype: dtype_code(T::DTYPE),
            bytes: le_bytes(p.tensor.data()).into(),
        });
    }
    for b in model.store.buffers() {
        entries.push(Entry {
            name: b.name.clone(),
            dims: vec![b.data.len() as u64],
            dtype: dtype_code(T::DTYPE),
            bytes: le_bytes(&b.data).into(),
        });
    }
    let header: usize = 8
        + 4
        + entries
            .iter()
            .map(|e| 4 + e.name.len() + 4 + 8 * e.dims.len() + 1 + 8)
            .sum::<usize>();
    let mut out = Vec::with_capacity(header + entries.iter().map(|e| e.bytes.len()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    let mut offset = header as u64;
    for e in &entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.dims.len() as u32).to_le_bytes());
        for d in &e.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.push(e.dtype);
        out.extend_from_slice(&offset.to_le_bytes());
        offset += e.bytes.len() as u64;
    }
    debug_assert_eq!(out.len(), header);
    for e in &entries {
        out.extend_from_slice(&e.bytes);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                msg: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
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

fn decode<T: Scalar>(bytes: &[u8], dtype: u8) -> Vec<T> {
    match dtype {
        0 => bytes
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect(),
        _ => bytes
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
            .collect(),
    }
}

/// Rebuilds a model from checkpoint bytes. Tensors stored in another
/// precision are converted.
pub fn from_bytes<T: Scalar>(buf: &[u8]) -> Result<Model<T>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "bad magic, not a checkpoint".into(),
        });
    }
    let count = r.u32("entry count")? as usize;
    let mut manifest = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let at = r.pos as u64;
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Format {
                offset: at,
                msg: "entry name is not UTF-8".into(),
            })?
            .to_string();
        let rank = r.u32("rank")? as usize;
        if rank > 8 {
            return Err(Error::Format {
                offset: at,
                msg: format!("entry {name:?} has implausible rank {rank}"),
            });
        }
        let dims = (0..rank).map(|_| r.u64("dims")).collect::<Result<Vec<u64>>>()?;
        let dtype = r.take(1, "dtype")?[0];
        let offset = r.u64("offset")?;
        let width = match dtype {
            0 => 4,
            1 => 8,
            2 => 1,
            other => {
                return Err(Error::Format {
                    offset: r.pos as u64 - 9,
                    msg: format!("unknown dtype code {other}"),
                })
            }
        };
        let numel = dims.iter().try_fold(1u64, |a, &d| a.checked_mul(d));
        let size = numel.and_then(|n| n.checked_mul(width)).ok_or_else(|| Error::Format {
            offset: at,
            msg: "entry size overflows".into(),
        })?;
        let end = offset
            .checked_add(size)
            .filter(|&e| e <= buf.len() as u64)
            .ok_or_else(|| Error::Format {
                offset: buf.len() as u64,
                msg: format!("truncated: entry {name:?} needs bytes {offset}..{}", offset.saturating_add(size)),
            })?;
        manifest.push((name, dims, dtype, &buf[offset as usize..end as usize]));
    }
    let (_, _, _, meta) = manifest
        .iter()
        .find(|(n, _, d, _)| n == META && *d == 2)
        .ok_or_else(|| Error::Format {
            offset: 12,
            msg: "missing network config entry".into(),
        })?;
    let cfg: NetworkConfig = serde_json::from_slice(meta).map_err(|e| Error::Config {
        stage: "checkpoint".into(),
        msg: format!("stored config unreadable: {e}"),
    })?;
    let mut model = Model::<T>::new(cfg, 0)?;
    let mut seen = 0usize;
    for (name, dims, dtype, bytes) in manifest.iter().filter(|(_, _, d, _)| *d != 2) {
        let dims: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
        let values = decode::<T>(bytes, *dtype);
        if let Some(id) = model.store.find(name) {
            let t = model.store.tensor_mut(id);
            if t.shape() != dims.as_slice() {
                return Err(Error::Config {
                    stage: "checkpoint".into(),
                    msg: format!("{name}: stored shape {dims:?}, model expects {:?}", t.shape()),
                });
            }
            *t = Tensor::from_vec(&dims, values)?.with_requires_grad(true);
            seen += 1;
        } else if let Some(b) = model.store.buffers_mut().iter_mut().find(|b| &b.name == name) {
            if b.data.len() != values.len() {
                return Err(Error::Config {
                    stage: "checkpoint".into(),
                    msg: format!("{name}: stored length {}, model expects {}", values.len(), b.data.len()),
                });
            }
            b.data = values;
            seen += 1;
        } else {
            return Err(Error::Config {
                stage: "checkpoint".into(),
                msg: format!("unexpected entry {name:?}"),
            });
        }
    }
    let expected = model.store.params().len() + model.store.buffers().len();
    if seen != expected {
        return Err(Error::Config {
            stage: "checkpoint".into(),
            msg: format!("checkpoint holds {seen} tensors, model has {expected}"),
        });
    }
    Ok(model)
}

pub fn save<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    from_bytes(&std::fs::read(path)?)
}
