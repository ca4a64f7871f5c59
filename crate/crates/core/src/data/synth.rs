//! Two-blob motion programs and their renderer.
//!
//! Classes come in pairs. The second member of a pair is the first played
//! backwards, so both members have the same distribution over single frames
//! and differ only in how frames follow each other.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class names in label order.
pub const CLASS_NAMES: [&str; 4] = ["converging", "diverging", "a_leads_b", "b_leads_a"];

/// Blob colours (RGB) for blobs A and B.
const COLOR_A: [f32; 3] = [0.95, 0.35, 0.15];
const COLOR_B: [f32; 3] = [0.15, 0.45, 0.95];
const BACKGROUND: f32 = 0.1;

/// Rendering and motion parameters shared by every video of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub classes: usize,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Blob standard deviation in pixels.
    pub sigma: f64,
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            classes: 4,
            frames: 64,
            channels: 3,
            height: 32,
            width: 32,
            sigma: 2.2,
            noise: 0.03,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::contract("synth_params", msg));
        if !matches!(self.classes, 2 | 4) {
            return bad(format!("class count must be 2 or 4, got {}", self.classes));
        }
        if self.channels != 3 {
            return bad(format!("frames are RGB, got {} channels", self.channels));
        }
        if self.frames < 2 || self.height < 8 || self.width < 8 {
            return bad(format!("video {}×{}×{} too small", self.frames, self.height, self.width));
        }
        if !(self.sigma > 0.0) || !(self.noise >= 0.0) {
            return bad("sigma must be positive and noise non-negative".into());
        }
        Ok(())
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Trajectory family of a class pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Motion {
    /// Horizontal approach: separation shrinks linearly from `gap_start` to
    /// `gap_end` around a common centre.
    Converge {
        centre: f64,
        y_a: f64,
        y_b: f64,
        gap_start: f64,
        gap_end: f64,
        /// Blob A starts on the left.
        a_left: bool,
    },
    /// Both blobs travel the same vertical path; B trails A by `lag` frames.
    Tandem {
        x_a: f64,
        x_b: f64,
        y0: f64,
        /// Pixels per frame, signed.
        velocity: f64,
        lag: f64,
    },
}

/// Everything needed to render one video.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionProgram {
    pub class: usize,
    pub motion: Motion,
    /// Play the canonical trajectory backwards.
    pub reversed: bool,
}

impl MotionProgram {
    /// Draws the free parameters of `class` in units of a `params`-sized frame.
    pub fn sample(class: usize, params: &SynthParams, rng: &mut ChaCha8Rng) -> Result<Self> {
        if class >= params.classes {
            return Err(Error::Index {
                op: "motion_program",
                index: class,
                limit: params.classes,
            });
        }
        let (h, w) = (params.height as f64, params.width as f64);
        let motion = match class / 2 {
            0 => Motion::Converge {
                centre: w * rng.random_range(0.42..0.58),
                y_a: h * rng.random_range(0.3..0.7),
                y_b: h * rng.random_range(0.3..0.7),
                gap_start: w * rng.random_range(0.62..0.78),
                gap_end: w * rng.random_range(0.05..0.18),
                a_left: rng.random_bool(0.5),
            },
            _ => {
                let span = params.frames as f64 - 1.0;
                let speed = h * rng.random_range(0.5..0.62) / span;
                let down = rng.random_bool(0.5);
                let lag = rng.random_range(0.3..0.4) * span;
                // leader travels from y_first to y_first ± speed·span
                let y_first = h * rng.random_range(0.2..0.26);
                let (y0, velocity) = if down { (y_first, speed) } else { (h - y_first, -speed) };
                Motion::Tandem {
                    x_a: w * rng.random_range(0.3..0.48),
                    x_b: w * rng.random_range(0.52..0.7),
                    y0,
                    velocity,
                    lag,
                }
            }
        };
        let mut program = MotionProgram {
            class,
            motion,
            reversed: class % 2 == 1,
        };
        if let Motion::Tandem { x_a, x_b, .. } = &mut program.motion {
            if rng.random_bool(0.5) {
                std::mem::swap(x_a, x_b);
            }
        }
        Ok(program)
    }

    /// The same scene played backwards, carrying the partner class label.
    pub fn time_reversed(&self) -> Self {
        MotionProgram {
            class: self.class ^ 1,
            motion: self.motion,
            reversed: !self.reversed,
        }
    }

    /// Blob centres `[(x_a, y_a), (x_b, y_b)]` at frame `t` of `frames`.
    pub fn centres(&self, t: usize, frames: usize) -> [(f64, f64); 2] {
        let span = (frames.max(2) - 1) as f64;
        let tau = if self.reversed { span - t as f64 } else { t as f64 };
        match self.motion {
            Motion::Converge {
                centre,
                y_a,
                y_b,
                gap_start,
                gap_end,
                a_left,
            } => {
                let gap = gap_start + (gap_end - gap_start) * tau / span;
                let side = if a_left { -0.5 } else { 0.5 };
                [(centre + side * gap, y_a), (centre - side * gap, y_b)]
            }
            Motion::Tandem {
                x_a,
                x_b,
                y0,
                velocity,
                lag,
            } => [(x_a, y0 + velocity * tau), (x_b, y0 + velocity * (tau - lag))],
        }
    }

    /// Label implied by the rendered trajectory alone: a shrinking gap is
    /// "converging"; in tandem motion the blob further along the direction
    /// of travel leads.
    pub fn trajectory_label(&self, frames: usize) -> usize {
        let [a0, b0] = self.centres(0, frames);
        let [a1, b1] = self.centres(frames - 1, frames);
        match self.motion {
            Motion::Converge { .. } => {
                if (a1.0 - b1.0).abs() < (a0.0 - b0.0).abs() {
                    0
                } else {
                    1
                }
            }
            Motion::Tandem { .. } => {
                let dir = a1.1 - a0.1;
                if (a0.1 - b0.1) * dir > 0.0 {
                    2
                } else {
                    3
                }
            }
        }
    }
}

/// Generator for one frame's noise, independent of every other frame.
fn frame_rng(seed: u64, t: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(t as u64 + 1)))
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d1_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Renders frame `t` as C×H×W values in [0, 1] into `out`.
pub fn render_frame(program: &MotionProgram, params: &SynthParams, seed: u64, t: usize, out: &mut [f32]) {
    let (h, w) = (params.height, params.width);
    debug_assert_eq!(out.len(), params.frame_len());
    let centres = program.centres(t, params.frames);
    let inv = -0.5 / (params.sigma * params.sigma);
    // separable Gaussians: profile along x and y per blob
    let profile = |c: f64, n: usize| -> Vec<f32> {
        (0..n)
            .map(|i| {
                let d = i as f64 + 0.5 - c;
                (d * d * inv).exp() as f32
            })
            .collect()
    };
    let blobs: Vec<(Vec<f32>, Vec<f32>, [f32; 3])> = centres
        .iter()
        .zip([COLOR_A, COLOR_B])
        .map(|(&(cx, cy), col)| (profile(cx, w), profile(cy, h), col))
        .collect();
    let mut rng = frame_rng(seed, t);
    let noise = Normal::new(0.0, params.noise.max(0.0)).expect("finite noise");
    for ch in 0..params.channels {
        for y in 0..h {
            for x in 0..w {
                let mut v = BACKGROUND;
                for (px, py, col) in &blobs {
                    v += col[ch] * px[x] * py[y];
                }
                if params.noise > 0.0 {
                    v += noise.sample(&mut rng) as f32;
                }
                out[(ch * h + y) * w + x] = v.clamp(0.0, 1.0);
            }
        }
    }
}

/// A rendered video.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub label: usize,
    pub seed: u64,
    /// T × C × H × W.
    pub dims: [usize; 4],
    pub frames: Vec<f32>,
}

impl SyntheticVideo {
    pub fn frame(&self, t: usize) -> &[f32] {
        let len = self.dims[1] * self.dims[2] * self.dims[3];
        &self.frames[t * len..(t + 1) * len]
    }
}

pub fn generate_video(program: &MotionProgram, params: &SynthParams, seed: u64) -> SyntheticVideo {
    let len = params.frame_len();
    let mut frames = vec![0.0f32; params.frames * len];
    for (t, chunk) in frames.chunks_exact_mut(len).enumerate() {
        render_frame(program, params, seed, t, chunk);
    }
    SyntheticVideo {
        label: program.class,
        seed,
        dims: [params.frames, params.channels, params.height, params.width],
        frames,
    }
}

/// Seed of video `index` in a dataset drawn with `seed`.
pub fn video_seed(seed: u64, index: usize) -> u64 {
    splitmix64(seed ^ splitmix64(index as u64).rotate_left(21))
}

/// Class and program of video `index`: classes cycle so every class is
/// equally represented.
pub fn video_program(params: &SynthParams, seed: u64, index: usize) -> Result<(u64, MotionProgram)> {
    let vseed = video_seed(seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(vseed);
    let program = MotionProgram::sample(index % params.classes, params, &mut rng)?;
    Ok((vseed, program))
}
