//! Synthetic order-sensitive videos, clip sampling and dataset storage.

pub mod clip;
pub mod io;
pub mod synth;

use std::fs::File;
use std::os::unix::fs::FileExt;
use std::path::Path;

use crate::error::{Error, Result};

pub use clip::{augment, AugmentMode, Clip, CropWindow};
pub use synth::{generate_video, MotionProgram, SynthParams, SyntheticVideo, CLASS_NAMES};

use io::RecordInfo;
use synth::{render_frame, video_program};

enum Source {
    /// Videos rendered on demand from their programs.
    Procedural {
        params: SynthParams,
        programs: Vec<(u64, MotionProgram)>,
    },
    Memory(Vec<SyntheticVideo>),
    /// Records read lazily from a dataset file.
    File {
        file: File,
        records: Vec<RecordInfo>,
    },
}

/// A labelled collection of videos sharing one T×C×H×W extent.
pub struct Dataset {
    source: Source,
    labels: Vec<usize>,
    dims: [usize; 4],
}

impl std::fmt::Debug for Dataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dataset")
            .field("len", &self.labels.len())
            .field("dims", &self.dims)
            .finish()
    }
}

fn uniform_dims<'a>(mut dims: impl Iterator<Item = [usize; 4]>) -> Result<[usize; 4]> {
    let first = dims.next().ok_or_else(|| Error::contract("dataset", "dataset is empty"))?;
    if let Some(other) = dims.find(|d| *d != first) {
        return Err(Error::dims("dataset", &first, &other));
    }
    Ok(first)
}

impl Dataset {
    /// `count` videos of the synthetic task drawn with `seed`.
    pub fn synthetic(params: SynthParams, count: usize, seed: u64) -> Result<Self> {
        params.validate()?;
        if count == 0 {
            return Err(Error::contract("dataset", "dataset is empty"));
        }
        let programs = (0..count).map(|i| video_program(&params, seed, i)).collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            labels: programs.iter().map(|(_, p)| p.class).collect(),
            dims: [params.frames, params.channels, params.height, params.width],
            source: Source::Procedural { params, programs },
        })
    }

    pub fn from_videos(videos: Vec<SyntheticVideo>) -> Result<Self> {
        let dims = uniform_dims(videos.iter().map(|v| v.dims))?;
        Ok(Dataset {
            labels: videos.iter().map(|v| v.label).collect(),
            dims,
            source: Source::Memory(videos),
        })
    }

    /// Opens a dataset file, validating its layout; frames are read on demand.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path)?;
        let total = file.metadata()?.len();
        let records = io::scan(total, |at, len| {
            let mut buf = vec![0u8; len];
            file.read_exact_at(&mut buf, at).ok().map(|_| buf)
        })?;
        let dims = uniform_dims(records.iter().map(|r| r.dims))?;
        Ok(Dataset {
            labels: records.iter().map(|r| r.label).collect(),
            dims,
            source: Source::File { file, records },
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// T_raw × C × H × W of every video.
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    /// One more than the largest label.
    pub fn classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.len() {
            return Err(Error::Index {
                op: "dataset",
                index: i,
                limit: self.len(),
            });
        }
        Ok(())
    }

    /// Frames `indices` of video `i`.
    pub fn clip(&self, i: usize, indices: &[usize]) -> Result<Clip> {
        self.check_index(i)?;
        let [t_raw, c, h, w] = self.dims;
        let len = c * h * w;
        if let Some(&bad) = indices.iter().find(|&&t| t >= t_raw) {
            return Err(Error::Index {
                op: "sample_clip",
                index: bad,
                limit: t_raw,
            });
        }
        let mut data = vec![0.0f32; indices.len() * len];
        match &self.source {
            Source::Procedural { params, programs } => {
                let (seed, program) = &programs[i];
                for (chunk, &t) in data.chunks_exact_mut(len).zip(indices) {
                    render_frame(program, params, *seed, t, chunk);
                }
            }
            Source::Memory(videos) => {
                for (chunk, &t) in data.chunks_exact_mut(len).zip(indices) {
                    chunk.copy_from_slice(videos[i].frame(t));
                }
            }
            Source::File { file, records } => {
                let mut buf = vec![0u8; len * 4];
                for (chunk, &t) in data.chunks_exact_mut(len).zip(indices) {
                    let at = records[i].data_offset + (t * len * 4) as u64;
                    file.read_exact_at(&mut buf, at)?;
                    chunk.copy_from_slice(&io::decode_f32(&buf));
                }
            }
        }
        Ok(Clip {
            dims: [indices.len(), c, h, w],
            data,
        })
    }

    /// The full video `i`.
    pub fn video(&self, i: usize) -> Result<SyntheticVideo> {
        self.check_index(i)?;
        if let Source::Memory(videos) = &self.source {
            return Ok(videos[i].clone());
        }
        let all: Vec<usize> = (0..self.dims[0]).collect();
        let seed = match &self.source {
            Source::Procedural { programs, .. } => programs[i].0,
            _ => 0,
        };
        Ok(SyntheticVideo {
            label: self.labels[i],
            seed,
            dims: self.dims,
            frames: self.clip(i, &all)?.data,
        })
    }

    /// Writes every video in the dataset file format.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_with(path, self.len(), |i| self.video(i))
    }

    /// Motion program of video `i` for procedural datasets.
    pub fn program(&self, i: usize) -> Option<&MotionProgram> {
        match &self.source {
            Source::Procedural { programs, .. } => programs.get(i).map(|(_, p)| p),
            _ => None,
        }
    }
}
