//! Video dataset files.
//!
//! ```text
//! "TBNVID1\0" u32 count
//! per video: u32 label, u32 T, u32 C, u32 H, u32 W, T·C·H·W little-endian f32
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::synth::SyntheticVideo;

pub const MAGIC: &[u8; 8] = b"TBNVID1\0";
pub const HEADER_BYTES: u64 = 12;
pub const RECORD_HEADER_BYTES: u64 = 20;

/// Location of one record inside a dataset file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordInfo {
    pub label: usize,
    pub dims: [usize; 4],
    /// Byte offset of the first sample.
    pub data_offset: u64,
}

/// Size of a file holding videos of the given dims.
pub fn expected_file_size<'a>(dims: impl IntoIterator<Item = &'a [usize; 4]>) -> u64 {
    HEADER_BYTES
        + dims
            .into_iter()
            .map(|d| RECORD_HEADER_BYTES + 4 * d.iter().product::<usize>() as u64)
            .sum::<u64>()
}

fn write_record(out: &mut impl Write, label: usize, dims: [usize; 4], frames: &[f32]) -> std::io::Result<()> {
    out.write_all(&(label as u32).to_le_bytes())?;
    for d in dims {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(frames.len() * 4);
    for v in frames {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)
}

/// Streams `count` videos produced by `video(i)` to `path`.
pub fn write_with(path: impl AsRef<Path>, count: usize, mut video: impl FnMut(usize) -> Result<SyntheticVideo>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&(count as u32).to_le_bytes())?;
    for i in 0..count {
        let v = video(i)?;
        write_record(&mut out, v.label, v.dims, &v.frames)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_videos(path: impl AsRef<Path>, videos: &[SyntheticVideo]) -> Result<()> {
    write_with(path, videos.len(), |i| Ok(videos[i].clone()))
}

pub fn encode_videos(videos: &[SyntheticVideo]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(videos.len() as u32).to_le_bytes());
    for v in videos {
        write_record(&mut out, v.label, v.dims, &v.frames).expect("writing to memory");
    }
    out
}

fn read_u32(buf: &[u8], at: u64, what: &str) -> Result<u32> {
    let at_us = at as usize;
    buf.get(at_us..at_us + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format {
            offset: at,
            msg: format!("truncated while reading {what}"),
        })
}

/// Walks record headers. `read` fetches `len` bytes at an offset (or fails
/// past the end); `total` is the file length.
pub(crate) fn scan(total: u64, mut read: impl FnMut(u64, usize) -> Option<Vec<u8>>) -> Result<Vec<RecordInfo>> {
    let head = read(0, HEADER_BYTES as usize).ok_or_else(|| Error::Format {
        offset: 0,
        msg: format!("file of {total} bytes is too short for a header"),
    })?;
    if &head[..8] != MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "bad magic, not a video dataset".into(),
        });
    }
    let count = read_u32(&head, 8, "count")? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 20));
    let mut pos = HEADER_BYTES;
    for i in 0..count {
        let rh = read(pos, RECORD_HEADER_BYTES as usize).ok_or_else(|| Error::Format {
            offset: pos,
            msg: format!("truncated header of video {i}"),
        })?;
        let f = |k: u64| read_u32(&rh, 4 * k, "record header").map(|v| v as usize);
        let label = f(0)?;
        let dims = [f(1)?, f(2)?, f(3)?, f(4)?];
        if dims.contains(&0) {
            return Err(Error::Format {
                offset: pos + 4,
                msg: format!("video {i} has an empty extent {dims:?}"),
            });
        }
        let bytes = dims
            .iter()
            .try_fold(4u64, |a, &d| a.checked_mul(d as u64))
            .ok_or_else(|| Error::Format {
                offset: pos + 4,
                msg: format!("video {i} extents overflow"),
            })?;
        let data_offset = pos + RECORD_HEADER_BYTES;
        let end = data_offset.checked_add(bytes).unwrap_or(u64::MAX);
        if end > total {
            return Err(Error::Format {
                offset: total,
                msg: format!("truncated: video {i} needs bytes up to {end}, file has {total}"),
            });
        }
        records.push(RecordInfo { label, dims, data_offset });
        pos = end;
    }
    if pos != total {
        return Err(Error::Format {
            offset: pos,
            msg: format!("{} trailing bytes after {count} videos", total - pos),
        });
    }
    Ok(records)
}

pub(crate) fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()
}

/// Parses a whole dataset held in memory. Seeds are not stored and read back as 0.
pub fn decode_videos(buf: &[u8]) -> Result<Vec<SyntheticVideo>> {
    let records = scan(buf.len() as u64, |at, len| {
        buf.get(at as usize..at as usize + len).map(<[u8]>::to_vec)
    })?;
    Ok(records
        .into_iter()
        .map(|r| {
            let n = r.dims.iter().product::<usize>() * 4;
            let start = r.data_offset as usize;
            SyntheticVideo {
                label: r.label,
                seed: 0,
                dims: r.dims,
                frames: decode_f32(&buf[start..start + n]),
            }
        })
        .collect())
}

pub fn read_videos(path: impl AsRef<Path>) -> Result<Vec<SyntheticVideo>> {
    decode_videos(&std::fs::read(path)?)
}
