//! Frame-marginal baseline: multinomial logistic regression on per-frame
//! features averaged over the clip. Averaging discards frame order, so the
//! baseline sees only the distribution of individual frames.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::clip::{clip_indices, crop, Clip};
use crate::data::Dataset;
use crate::error::{Error, Result};

use super::eval::{protocol_views, summarize, EvalProtocol, EvalReport};
use super::{train_clip, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// Side of the average-pooling cell applied to each frame.
    pub pool: usize,
    pub clips_per_video: usize,
    pub iterations: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            pool: 4,
            clips_per_video: 2,
            iterations: 300,
            lr: 0.5,
            l2: 1e-4,
        }
    }
}

/// Time average of per-frame pooled intensities and their squares.
pub fn frame_features(clip: &Clip, pool: usize) -> Vec<f64> {
    let [t, c, h, w] = clip.dims;
    let (ph, pw) = (h.div_ceil(pool), w.div_ceil(pool));
    let cells = c * ph * pw;
    let mut out = vec![0.0; 2 * cells];
    for frame in clip.data.chunks_exact(c * h * w) {
        let mut pooled = vec![0.0f64; cells];
        let mut counts = vec![0usize; cells];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let cell = (ch * ph + y / pool) * pw + x / pool;
                    pooled[cell] += frame[(ch * h + y) * w + x] as f64;
                    counts[cell] += 1;
                }
            }
        }
        for (i, (p, n)) in pooled.iter().zip(&counts).enumerate() {
            let v = p / *n as f64;
            out[i] += v;
            out[cells + i] += v * v;
        }
    }
    out.iter_mut().for_each(|v| *v /= t as f64);
    out
}

#[derive(Debug, Clone)]
pub struct FrameMarginalBaseline {
    pub cfg: BaselineConfig,
    classes: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// classes × features, then classes biases.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl FrameMarginalBaseline {
    pub fn fit(data: &Dataset, train: &TrainConfig, cfg: BaselineConfig) -> Result<Self> {
        if cfg.pool == 0 || cfg.clips_per_video == 0 {
            return Err(Error::contract("baseline", "pool and clips per video must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(train.seed ^ 0x6261_7365);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..data.len() {
            for _ in 0..cfg.clips_per_video {
                xs.push(frame_features(&train_clip(data, i, train, &mut rng)?, cfg.pool));
                ys.push(data.labels()[i]);
            }
        }
        let d = xs[0].len();
        let n = xs.len() as f64;
        let mut mean = vec![0.0; d];
        for x in &xs {
            mean.iter_mut().zip(x).for_each(|(m, v)| *m += v / n);
        }
        let mut scale = vec![0.0; d];
        for x in &xs {
            scale
                .iter_mut()
                .zip(x)
                .zip(&mean)
                .for_each(|((s, v), m)| *s += (v - m) * (v - m) / n);
        }
        scale.iter_mut().for_each(|s| *s = 1.0 / s.sqrt().max(1e-6));
        let standardized: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| x.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) * s).collect())
            .collect();
        let k = data.classes();
        let mut model = FrameMarginalBaseline {
            cfg,
            classes: k,
            mean,
            scale,
            weights: vec![0.0; k * d],
            bias: vec![0.0; k],
        };
        // full-batch gradient descent with momentum on the mean cross-entropy
        let (mut vw, mut vb) = (vec![0.0; k * d], vec![0.0; k]);
        for _ in 0..cfg.iterations {
            let mut gw = vec![0.0; k * d];
            let mut gb = vec![0.0; k];
            for (x, &y) in standardized.iter().zip(&ys) {
                let p = model.probs_standardized(x);
                for c in 0..k {
                    let err = (p[c] - if c == y { 1.0 } else { 0.0 }) / n;
                    gb[c] += err;
                    for (g, v) in gw[c * d..(c + 1) * d].iter_mut().zip(x) {
                        *g += err * v;
                    }
                }
            }
            for ((v, g), w) in vw.iter_mut().zip(&gw).zip(&model.weights) {
                *v = 0.9 * *v + g + cfg.l2 * w;
            }
            for (v, g) in vb.iter_mut().zip(&gb) {
                *v = 0.9 * *v + g;
            }
            model.weights.iter_mut().zip(&vw).for_each(|(w, v)| *w -= cfg.lr * v);
            model.bias.iter_mut().zip(&vb).for_each(|(b, v)| *b -= cfg.lr * v);
        }
        Ok(model)
    }

    fn probs_standardized(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let logits: Vec<f64> = (0..self.classes)
            .map(|c| self.bias[c] + self.weights[c * d..(c + 1) * d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }

    pub fn probs(&self, clip: &Clip) -> Vec<f64> {
        let x: Vec<f64> = frame_features(clip, self.cfg.pool)
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect();
        self.probs_standardized(&x)
    }

    /// Same multi-view protocol as the networks.
    pub fn evaluate(&self, data: &Dataset, train: &TrainConfig, proto: &EvalProtocol) -> Result<EvalReport> {
        let views = protocol_views(data, train, proto)?;
        let t_raw = data.dims()[0];
        let mut scores = Vec::with_capacity(data.len());
        for i in 0..data.len() {
            let mut mean = vec![0.0; self.classes];
            for &(start, win) in &views {
                let idx = clip_indices(t_raw, train.clip_frames, train.clip_stride, start)?;
                let clip = crop(&data.clip(i, &idx)?, win)?;
                mean.iter_mut()
                    .zip(self.probs(&clip))
                    .for_each(|(m, p)| *m += p / views.len() as f64);
            }
            scores.push(mean);
        }
        let mut r = summarize(&scores, data.labels(), proto.top_k, proto.describe());
        r.protocol = format!("frame-marginal baseline, {}", r.protocol);
        Ok(r)
    }
}
