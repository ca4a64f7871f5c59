use crate::autograd::conv::{conv2d_geom, conv2d_spatial, conv3d_geom, Conv3dParams};
use crate::autograd::ops::{batch_norm, rms_norm};
use crate::autograd::{BufferId, Graph, ParamId, ParamKind, ParamStore, Var};
use crate::complexity::{LayerEntry, LayerOp};
use crate::error::Result;
use crate::init::{he_init, stream_rng};
use crate::temporal::conv3d;
use crate::tensor::{ClipDims, Scalar, Tensor};

use super::model::ForwardCtx;

pub const BN_EPS: f64 = 1e-5;
/// Weight of the newest batch in the running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvKind {
    /// Per-frame k×k convolution.
    Spatial { k: usize, stride: usize, pad: usize },
    /// k_t×k×k convolution with replicated temporal borders.
    Full3d { k_t: usize, k: usize, conv: Conv3dParams },
}

/// Bias-free convolution (always followed by normalization).
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub name: String,
    pub kind: ConvKind,
    pub c_in: usize,
    pub c_out: usize,
    pub weight: ParamId,
}

impl ConvLayer {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, kind: ConvKind, c_in: usize, c_out: usize, seed: u64) -> Result<Self> {
        let (shape, fan_in) = match kind {
            ConvKind::Spatial { k, .. } => (vec![c_out, c_in, k, k], c_in * k * k),
            ConvKind::Full3d { k_t, k, .. } => (vec![c_out, c_in, k_t, k, k], c_in * k_t * k * k),
        };
        let full = format!("{name}.weight");
        let w = he_init(&shape, fan_in, &mut stream_rng(seed, &full))?;
        let weight = store.add(full, ParamKind::Weight, w);
        Ok(ConvLayer {
            name: name.to_string(),
            kind,
            c_in,
            c_out,
            weight,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        match self.kind {
            ConvKind::Spatial { stride, pad, .. } => conv2d_spatial(g, x, w, stride, pad),
            ConvKind::Full3d { conv, .. } => conv3d(g, x, w, conv),
        }
    }

    /// Output extents for an input of the given shape, plus the layer entry.
    pub fn describe(&self, input: ClipDims) -> Result<(ClipDims, LayerEntry)> {
        let shape = input.shape();
        let (out, op) = match self.kind {
            ConvKind::Spatial { k, stride, pad } => {
                let geom = conv2d_geom(&shape, &[self.c_out, self.c_in, k, k], stride, pad)?;
                let out = geom.output();
                let positions = out.t * out.h * out.w;
                (
                    out,
                    LayerOp::Conv2d {
                        c_in: self.c_in,
                        c_out: self.c_out,
                        k,
                        positions,
                    },
                )
            }
            ConvKind::Full3d { k_t, k, conv } => {
                let geom = conv3d_geom(&shape, &[self.c_out, self.c_in, k_t, k, k], conv)?;
                let out = geom.output();
                let positions = out.t * out.h * out.w;
                (
                    out,
                    LayerOp::Conv3d {
                        c_in: self.c_in,
                        c_out: self.c_out,
                        k_t,
                        k,
                        positions,
                    },
                )
            }
        };
        Ok((out, LayerEntry::new(format!("{}.weight", self.name), op)))
    }
}

/// Per-channel batch normalization with running statistics.
#[derive(Debug, Clone)]
pub struct BnLayer {
    pub name: String,
    pub c: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl BnLayer {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, c: usize) -> Self {
        BnLayer {
            name: name.to_string(),
            c,
            gamma: store.add(format!("{name}.gamma"), ParamKind::NormScale, Tensor::ones(&[c])),
            beta: store.add(format!("{name}.beta"), ParamKind::NormShift, Tensor::zeros(&[c])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), vec![T::zero(); c]),
            running_var: store.add_buffer(format!("{name}.running_var"), vec![T::one(); c]),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, ctx: &mut ForwardCtx<'_, T>) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let eps = T::of(BN_EPS);
        if ctx.train {
            let (y, stats) = batch_norm(g, x, gamma, beta, None, eps)?;
            if let Some(stats) = stats {
                ctx.stat_updates.push((self.running_mean, stats.mean));
                ctx.stat_updates.push((self.running_var, stats.var));
            }
            Ok(y)
        } else {
            let running = (store.buffer(self.running_mean), store.buffer(self.running_var));
            Ok(batch_norm(g, x, gamma, beta, Some(running), eps)?.0)
        }
    }

    pub fn describe(&self, input: ClipDims) -> LayerEntry {
        LayerEntry::new(
            self.name.clone(),
            LayerOp::BatchNorm {
                c: self.c,
                positions: input.t * input.h * input.w,
            },
        )
    }
}

/// Per-channel scale normalization (no centring, no shift) with a running
/// mean square.
#[derive(Debug, Clone)]
pub struct RmsLayer {
    pub name: String,
    pub c: usize,
    pub gamma: ParamId,
    pub running_ms: BufferId,
}

impl RmsLayer {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, c: usize) -> Self {
        RmsLayer {
            name: name.to_string(),
            c,
            gamma: store.add(format!("{name}.gamma"), ParamKind::NormScale, Tensor::ones(&[c])),
            running_ms: store.add_buffer(format!("{name}.running_ms"), vec![T::one(); c]),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, ctx: &mut ForwardCtx<'_, T>) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let eps = T::of(BN_EPS);
        if ctx.train {
            let (y, ms) = rms_norm(g, x, gamma, None, eps)?;
            if let Some(ms) = ms {
                ctx.stat_updates.push((self.running_ms, ms));
            }
            Ok(y)
        } else {
            Ok(rms_norm(g, x, gamma, Some(store.buffer(self.running_ms)), eps)?.0)
        }
    }

    pub fn describe(&self, input: ClipDims) -> LayerEntry {
        LayerEntry::new(
            self.name.clone(),
            LayerOp::RmsNorm {
                c: self.c,
                positions: input.t * input.h * input.w,
            },
        )
    }
}
