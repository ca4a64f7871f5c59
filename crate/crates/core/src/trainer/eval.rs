use serde::{Deserialize, Serialize};

use crate::autograd::ops::softmax_rows;
use crate::data::clip::{clip_indices, crop, uniform_starts, CropWindow};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::Model;
use crate::tensor::Scalar;

use super::{argmax, check_compatible, stack_clips, TrainConfig};

/// Multi-view testing: `clips` evenly spaced clips per video, each seen
/// through `crops` windows; the prediction is the argmax of the mean softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalProtocol {
    pub clips: usize,
    /// 1: centre. 2: centre and its mirror. Up to 10: centre and four corners,
    /// each with its mirror.
    pub crops: usize,
    pub top_k: usize,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            clips: 6,
            crops: 2,
            top_k: 2,
        }
    }
}

impl EvalProtocol {
    pub fn single() -> Self {
        EvalProtocol {
            clips: 1,
            crops: 1,
            top_k: 2,
        }
    }

    pub fn describe(&self) -> String {
        format!(
            "{} clip(s) x {} crop(s) per video, mean softmax, top-1/top-{}",
            self.clips, self.crops, self.top_k
        )
    }

    fn windows(&self, h: usize, w: usize, size: usize) -> Result<Vec<CropWindow>> {
        if self.crops == 0 || self.crops > 10 || self.clips == 0 || self.top_k == 0 {
            return Err(Error::contract(
                "eval_protocol",
                format!("need 1..=10 crops, ≥1 clip and top-k ≥ 1, got {self:?}"),
            ));
        }
        let c = CropWindow::centre(h, w, size)?;
        let (dy, dx) = (h - size, w - size);
        let corners = [(c.top, c.left), (0, 0), (0, dx), (dy, 0), (dy, dx)];
        let mut out = Vec::with_capacity(self.crops);
        for &(top, left) in &corners {
            for flip in [false, true] {
                if out.len() < self.crops {
                    out.push(CropWindow { top, left, size, flip });
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub top1: f64,
    pub topk: f64,
    pub k: usize,
    /// Accuracy of choosing between the two members of the true class pair.
    pub pair_acc: f64,
    pub protocol: String,
    pub predictions: Vec<usize>,
    /// Mean softmax per video.
    pub scores: Vec<Vec<f64>>,
}

/// A clip start and crop window applied to one video.
pub type View = (usize, CropWindow);

/// Views prescribed by `proto` for the dataset's geometry.
pub fn protocol_views(data: &Dataset, cfg: &TrainConfig, proto: &EvalProtocol) -> Result<Vec<View>> {
    let [t_raw, _, h, w] = data.dims();
    let starts = uniform_starts(t_raw, cfg.clip_frames, cfg.clip_stride, proto.clips)?;
    let windows = proto.windows(h, w, cfg.crop)?;
    Ok(starts.iter().flat_map(|&s| windows.iter().map(move |&win| (s, win))).collect())
}

/// Evaluates with an explicit view list (the same for every video).
pub fn evaluate_views<T: Scalar>(model: &Model<T>, data: &Dataset, cfg: &TrainConfig, views: &[View], top_k: usize) -> Result<EvalReport> {
    check_compatible(model, data, cfg)?;
    if views.is_empty() {
        return Err(Error::contract("evaluate", "no views"));
    }
    let k = model.cfg.classes;
    let per_batch = (64 / views.len()).max(1);
    let t_raw = data.dims()[0];
    let mut scores = Vec::with_capacity(data.len());
    let videos: Vec<usize> = (0..data.len()).collect();
    for chunk in videos.chunks(per_batch) {
        let mut clips = Vec::with_capacity(chunk.len() * views.len());
        for &i in chunk {
            for &(start, win) in views {
                let idx = clip_indices(t_raw, cfg.clip_frames, cfg.clip_stride, start)?;
                clips.push(crop(&data.clip(i, &idx)?, win)?);
            }
        }
        let logits = model.forward_classify(&stack_clips::<T>(&clips)?)?;
        let probs = softmax_rows(logits.data(), k);
        for per_video in probs.chunks(views.len() * k) {
            let mut mean = vec![0.0f64; k];
            for row in per_video.chunks(k) {
                for (m, p) in mean.iter_mut().zip(row) {
                    *m += p.as_f64();
                }
            }
            mean.iter_mut().for_each(|m| *m /= views.len() as f64);
            scores.push(mean);
        }
    }
    Ok(summarize(
        &scores,
        data.labels(),
        top_k,
        format!("{} view(s) per video", views.len()),
    ))
}

pub fn evaluate<T: Scalar>(model: &Model<T>, data: &Dataset, cfg: &TrainConfig, proto: &EvalProtocol) -> Result<EvalReport> {
    let views = protocol_views(data, cfg, proto)?;
    let mut report = evaluate_views(model, data, cfg, &views, proto.top_k)?;
    report.protocol = proto.describe();
    Ok(report)
}

/// Fraction of videos whose true class outscores its time-reversed partner.
pub fn pair_accuracy(scores: &[Vec<f64>], labels: &[usize]) -> f64 {
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(s, &l)| s.get(l ^ 1).is_some_and(|&other| s[l] > other))
        .count();
    hits as f64 / labels.len().max(1) as f64
}

pub(crate) fn summarize(scores: &[Vec<f64>], labels: &[usize], top_k: usize, protocol: String) -> EvalReport {
    let n = labels.len().max(1) as f64;
    let predictions: Vec<usize> = scores.iter().map(|s| argmax(s)).collect();
    let top1 = predictions.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / n;
    let topk = scores
        .iter()
        .zip(labels)
        .filter(|(s, &l)| s.iter().filter(|&&v| v > s[l]).count() < top_k)
        .count() as f64
        / n;
    EvalReport {
        top1,
        topk,
        k: top_k,
        pair_acc: pair_accuracy(scores, labels),
        protocol,
        predictions,
        scores: scores.to_vec(),
    }
}
