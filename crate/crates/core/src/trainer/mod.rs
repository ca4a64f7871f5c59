//! SGD training and multi-clip evaluation.

pub mod baseline;
mod eval;
mod sgd;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::ops::softmax_cross_entropy;
use crate::autograd::Graph;
use crate::data::clip::{crop, sample_clip_indices, Clip, CropWindow};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::init::stream_rng;
use crate::network::{ForwardCtx, Model};
use crate::tensor::{Scalar, Tensor};

pub use eval::{evaluate, evaluate_views, pair_accuracy, protocol_views, EvalProtocol, EvalReport, View};
pub use sgd::Sgd;

/// Optimization schedule and clip sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Decay points as fractions of `epochs`.
    pub milestones: Vec<f64>,
    pub decay: f64,
    pub seed: u64,
    pub clip_frames: usize,
    pub clip_stride: usize,
    pub crop: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            base_lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 32,
            milestones: vec![0.3, 0.6, 5.0 / 6.0],
            decay: 0.1,
            seed: 0,
            clip_frames: 8,
            clip_stride: 4,
            crop: 28,
        }
    }
}

impl TrainConfig {
    /// Milestone epochs, rounded to the nearest epoch.
    pub fn milestone_epochs(&self) -> Vec<usize> {
        self.milestones.iter().map(|f| (f * self.epochs as f64).round() as usize).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::contract("train_config", msg));
        if self.batch_size == 0 || self.clip_frames == 0 || self.clip_stride == 0 || self.crop == 0 {
            return bad("batch size, clip frames, stride and crop must be positive");
        }
        if !(self.base_lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return bad("need lr > 0, 0 ≤ momentum < 1, weight decay ≥ 0");
        }
        Ok(())
    }
}

/// `base · decay^(milestones passed)`, with epochs counted from 0.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let passed = cfg.milestone_epochs().iter().filter(|&&m| epoch >= m).count();
    cfg.base_lr * cfg.decay.powi(passed as i32)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_acc: Option<f64>,
}

/// Stacks clips into an N×T×C×H×W tensor.
pub fn stack_clips<T: Scalar>(clips: &[Clip]) -> Result<Tensor<T>> {
    let first = clips.first().ok_or_else(|| Error::contract("stack_clips", "no clips"))?;
    let mut data = Vec::with_capacity(clips.len() * first.data.len());
    for c in clips {
        if c.dims != first.dims {
            return Err(Error::dims("stack_clips", &first.dims, &c.dims));
        }
        data.extend(c.data.iter().map(|&v| T::of(v as f64)));
    }
    let mut shape = vec![clips.len()];
    shape.extend_from_slice(&first.dims);
    Tensor::from_vec(&shape, data)
}

/// Checks that a dataset can feed a model under `cfg`.
pub fn check_compatible<T: Scalar>(model: &Model<T>, data: &Dataset, cfg: &TrainConfig) -> Result<()> {
    let [t_raw, c, h, w] = data.dims();
    let m = &model.cfg;
    let mismatch = |msg: String| {
        Err(Error::Config {
            stage: "dataset".into(),
            msg,
        })
    };
    if data.classes() > m.classes {
        return mismatch(format!("dataset has {} classes, model predicts {}", data.classes(), m.classes));
    }
    if c != m.in_channels || cfg.clip_frames != m.frames || cfg.crop != m.height || cfg.crop != m.width {
        return mismatch(format!(
            "clips of {}×{c}×{}×{} do not fit a model expecting {:?}",
            cfg.clip_frames,
            cfg.crop,
            cfg.crop,
            m.clip_shape()
        ));
    }
    if cfg.crop > h || cfg.crop > w {
        return mismatch(format!("crop {} exceeds {h}×{w} frames", cfg.crop));
    }
    if (cfg.clip_frames - 1) * cfg.clip_stride + 1 > t_raw {
        return mismatch(format!(
            "{}-frame clips at stride {} need {} frames, videos have {t_raw}",
            cfg.clip_frames,
            cfg.clip_stride,
            (cfg.clip_frames - 1) * cfg.clip_stride + 1
        ));
    }
    Ok(())
}

/// Random clip + random crop/flip for video `i`.
pub fn train_clip(data: &Dataset, i: usize, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Clip> {
    let [t_raw, _, h, w] = data.dims();
    let idx = sample_clip_indices(t_raw, cfg.clip_frames, cfg.clip_stride, rng)?;
    let win = CropWindow::random(h, w, cfg.crop, rng)?;
    crop(&data.clip(i, &idx)?, win)
}

/// Per-epoch observer: called after every epoch with the log line so far.
pub trait EpochHook<T: Scalar> {
    fn after_epoch(&mut self, log: &mut EpochLog, model: &Model<T>) -> Result<()>;
}

impl<T: Scalar, F: FnMut(&mut EpochLog, &Model<T>) -> Result<()>> EpochHook<T> for F {
    fn after_epoch(&mut self, log: &mut EpochLog, model: &Model<T>) -> Result<()> {
        self(log, model)
    }
}

/// Mean loss and accuracy of one training step.
pub struct StepStats {
    pub loss: f64,
    pub correct: usize,
}

/// Forward, backward and update on one batch.
pub fn train_step<T: Scalar>(
    model: &mut Model<T>,
    opt: &mut Sgd<T>,
    clips: &Tensor<T>,
    labels: &[usize],
    lr: f64,
    mask_rng: &mut ChaCha8Rng,
) -> Result<StepStats> {
    let mut g = Graph::new();
    let x = g.constant(clips.clone());
    let mut ctx = ForwardCtx::train(mask_rng);
    let logits = model.forward(&mut g, x, &mut ctx)?;
    let loss = softmax_cross_entropy(&mut g, logits, labels)?;
    let loss_value = g.value(loss).data()[0].as_f64();
    if !loss_value.is_finite() {
        return Err(Error::Training {
            step: opt.steps(),
            msg: format!("loss became {loss_value}"),
        });
    }
    let k = model.cfg.classes;
    let correct = g
        .value(logits)
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count();
    g.backward(loss)?;
    model.store.zero_grads();
    g.write_param_grads(&mut model.store);
    drop(g);
    opt.step(&mut model.store, lr)?;
    model.commit(ctx);
    Ok(StepStats { loss: loss_value, correct })
}

pub(crate) fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Trains `model` on `data`. Shuffling, clip sampling, crops and factor
/// masks each draw from their own stream of `cfg.seed`, so a run is
/// reproducible bit for bit.
pub fn train<T: Scalar>(model: &mut Model<T>, data: &Dataset, cfg: &TrainConfig, mut hook: impl EpochHook<T>) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    check_compatible(model, data, cfg)?;
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut mask_rng = stream_rng(cfg.seed, "dropfactor");
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut stream_rng(cfg.seed, &format!("shuffle/{epoch}")));
        let mut clip_rng = stream_rng(cfg.seed, &format!("clips/{epoch}"));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let clips = batch
                .iter()
                .map(|&i| train_clip(data, i, cfg, &mut clip_rng))
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels()[i]).collect();
            let x = stack_clips::<T>(&clips)?;
            let stats = train_step(model, &mut opt, &x, &labels, lr, &mut mask_rng).map_err(|e| match e {
                Error::Training { step, msg } => Error::Training {
                    step,
                    msg: format!("epoch {epoch}: {msg}"),
                },
                other => other,
            })?;
            loss_sum += stats.loss * batch.len() as f64;
            correct += stats.correct;
        }
        let mut log = EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / data.len() as f64,
            train_acc: correct as f64 / data.len() as f64,
            eval_acc: None,
        };
        hook.after_epoch(&mut log, model)?;
        logs.push(log);
    }
    Ok(logs)
}

/// Mean cross-entropy of the model in eval mode over one fixed clip per
/// video (used to compare against an untrained model).
pub fn mean_loss<T: Scalar>(model: &Model<T>, data: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let order: Vec<usize> = (0..data.len()).collect();
    for batch in order.chunks(cfg.batch_size.max(1)) {
        let clips = batch
            .iter()
            .map(|&i| train_clip(data, i, cfg, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<usize> = batch.iter().map(|&i| data.labels()[i]).collect();
        let mut g = Graph::new();
        let x = g.constant(stack_clips::<T>(&clips)?);
        let mut ctx = ForwardCtx::eval();
        let logits = model.forward(&mut g, x, &mut ctx)?;
        let loss = softmax_cross_entropy(&mut g, logits, &labels)?;
        total += g.value(loss).data()[0].as_f64() * batch.len() as f64;
    }
    Ok(total / data.len() as f64)
}
