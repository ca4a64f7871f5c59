//! Clip sampling and spatial augmentation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// T × C × H × W frames in `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub dims: [usize; 4],
    pub data: Vec<f32>,
}

impl Clip {
    pub fn frame_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }
}

/// Frame indices `start, start + stride, …` for a clip of `t` frames.
pub fn clip_indices(t_raw: usize, t: usize, stride: usize, start: usize) -> Result<Vec<usize>> {
    let need = clip_span(t, stride)?;
    if start + need > t_raw {
        return Err(Error::contract(
            "sample_clip",
            format!(
                "clip of {t} frames at stride {stride} from {start} needs {} frames, video has {t_raw}",
                start + need
            ),
        ));
    }
    Ok((0..t).map(|i| start + i * stride).collect())
}

/// Raw frames covered by a clip: `(t − 1)·stride + 1`.
pub fn clip_span(t: usize, stride: usize) -> Result<usize> {
    if t == 0 || stride == 0 {
        return Err(Error::contract("sample_clip", "clip length and stride must be positive"));
    }
    Ok((t - 1) * stride + 1)
}

/// Uniformly random start; returns the sampled indices.
pub fn sample_clip_indices(t_raw: usize, t: usize, stride: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let need = clip_span(t, stride)?;
    if need > t_raw {
        return Err(Error::contract(
            "sample_clip",
            format!("video of {t_raw} frames is shorter than a {t}×{stride} clip ({need} frames)"),
        ));
    }
    let start = rng.random_range(0..=t_raw - need);
    clip_indices(t_raw, t, stride, start)
}

/// `k` starts spread evenly over the valid range (multi-clip evaluation).
pub fn uniform_starts(t_raw: usize, t: usize, stride: usize, k: usize) -> Result<Vec<usize>> {
    let need = clip_span(t, stride)?;
    if need > t_raw || k == 0 {
        return Err(Error::contract(
            "uniform_starts",
            format!("cannot place {k} clips of {need} frames in {t_raw}"),
        ));
    }
    let last = t_raw - need;
    Ok((0..k)
        .map(|i| if k == 1 { last / 2 } else { (i * last + (k - 1) / 2) / (k - 1) })
        .collect())
}

/// Gathers `indices` from a T_raw×C×H×W buffer.
pub fn gather_frames(frames: &[f32], dims: [usize; 4], indices: &[usize]) -> Result<Clip> {
    let len = dims[1] * dims[2] * dims[3];
    let mut data = Vec::with_capacity(indices.len() * len);
    for &i in indices {
        if i >= dims[0] {
            return Err(Error::Index {
                op: "sample_clip",
                index: i,
                limit: dims[0],
            });
        }
        data.extend_from_slice(&frames[i * len..(i + 1) * len]);
    }
    Ok(Clip {
        dims: [indices.len(), dims[1], dims[2], dims[3]],
        data,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    Train,
    Eval,
}

/// A crop window plus mirror flag, applied identically to every frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropWindow {
    pub top: usize,
    pub left: usize,
    pub size: usize,
    pub flip: bool,
}

impl CropWindow {
    pub fn centre(h: usize, w: usize, size: usize) -> Result<Self> {
        check_crop(h, w, size)?;
        Ok(CropWindow {
            top: (h - size) / 2,
            left: (w - size) / 2,
            size,
            flip: false,
        })
    }

    /// Random window with a fair-coin flip.
    pub fn random(h: usize, w: usize, size: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        check_crop(h, w, size)?;
        Ok(CropWindow {
            top: rng.random_range(0..=h - size),
            left: rng.random_range(0..=w - size),
            size,
            flip: rng.random_bool(0.5),
        })
    }
}

fn check_crop(h: usize, w: usize, size: usize) -> Result<()> {
    if size == 0 || size > h || size > w {
        return Err(Error::contract("augment", format!("crop {size} does not fit a {h}×{w} frame")));
    }
    Ok(())
}

/// Applies a crop window.
pub fn crop(clip: &Clip, win: CropWindow) -> Result<Clip> {
    let [t, c, h, w] = clip.dims;
    check_crop(h, w, win.size)?;
    if win.top + win.size > h || win.left + win.size > w {
        return Err(Error::contract("augment", format!("window {win:?} outside a {h}×{w} frame")));
    }
    let s = win.size;
    let mut data = Vec::with_capacity(t * c * s * s);
    for plane in clip.data.chunks_exact(h * w) {
        for y in win.top..win.top + s {
            let row = &plane[y * w + win.left..y * w + win.left + s];
            if win.flip {
                data.extend(row.iter().rev());
            } else {
                data.extend_from_slice(row);
            }
        }
    }
    Ok(Clip { dims: [t, c, s, s], data })
}

/// Horizontal mirror of every frame.
pub fn flip(clip: &Clip) -> Clip {
    let w = clip.dims[3];
    let mut data = clip.data.clone();
    for row in data.chunks_exact_mut(w) {
        row.reverse();
    }
    Clip { dims: clip.dims, data }
}

/// Train: random crop and coin-flip mirror. Eval: centre crop.
pub fn augment(clip: &Clip, size: usize, mode: AugmentMode, rng: &mut ChaCha8Rng) -> Result<Clip> {
    let [_, _, h, w] = clip.dims;
    let win = match mode {
        AugmentMode::Train => CropWindow::random(h, w, size, rng)?,
        AugmentMode::Eval => CropWindow::centre(h, w, size)?,
    };
    crop(clip, win)
}
