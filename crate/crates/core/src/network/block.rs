use crate::autograd::conv::Conv3dParams;
use crate::autograd::ops::{add, relu};
use crate::autograd::{Graph, ParamStore, Var};
use crate::complexity::{BottleneckGroup, LayerEntry, LayerOp, LayerStack};
use crate::error::Result;
use crate::tb::{tb_forward, BottleneckTb, TBConfig};
use crate::temporal::{temporal_conv_geom, temporal_conv_strided};
use crate::tensor::{ClipDims, Scalar};

use super::layers::{BnLayer, ConvKind, ConvLayer, RmsLayer};
use super::model::ForwardCtx;
use super::{BlockKind, BlockSpec};

/// Post-activation basic residual block, optionally carrying a bottleneck
/// bilinear path.
///
/// * plain: `relu(s(x) + u)` with `u = bn2(conv2(relu(bn1(conv1(x)))))`
/// * wide:  `relu(s(x) + u + tb(x))`
/// * deep:  `relu(s(x) + u + tb(u))`
///
/// where `tb` is the bottleneck bilinear path of [`TbPath`].
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub name: String,
    pub spec: BlockSpec,
    pub conv1: ConvLayer,
    pub bn1: BnLayer,
    pub conv2: ConvLayer,
    pub bn2: BnLayer,
    pub shortcut: Option<(ConvLayer, BnLayer)>,
    pub tb: Option<TbPath>,
}

/// Bottleneck bilinear path inside a residual block:
/// `conv_out(rms(bilinear(conv_in(bn(x)))))`.
///
/// The bilinear module is quadratic in its input and in its factors, so its
/// input is batch-normalized and its output rescaled to unit mean square.
/// The rescaling has no shift, so zero factors still give an exactly zero
/// path.
#[derive(Debug, Clone)]
pub struct TbPath {
    pub bn: BnLayer,
    pub tb: BottleneckTb,
    pub norm: RmsLayer,
}

impl TbPath {
    fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, cfg: TBConfig, stride: usize, seed: u64) -> Result<Self> {
        let bn = BnLayer::new(store, &format!("{name}.bn"), cfg.c_in);
        let tb = BottleneckTb::new(store, name, cfg, stride, seed)?;
        let norm = RmsLayer::new(store, &format!("{name}.norm"), cfg.bottleneck_width());
        Ok(TbPath { bn, tb, norm })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, ctx: &mut ForwardCtx<'_, T>) -> Result<Var> {
        let cfg = self.tb.cfg;
        let mask = ctx.dropfactor_mask(cfg.factors, cfg.dropfactor_keep)?;
        let h = self.bn.forward(g, store, x, ctx)?;
        let w_in = g.param(store, self.tb.conv_in);
        let h = temporal_conv_strided(g, h, w_in, 1, self.tb.spatial_stride)?;
        let f = g.param(store, self.tb.factor);
        let h = tb_forward(g, h, f, mask.as_ref())?;
        let h = self.norm.forward(g, store, h, ctx)?;
        let w_out = g.param(store, self.tb.conv_out);
        temporal_conv_strided(g, h, w_out, 1, 1)
    }
}

impl ResBlock {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, spec: BlockSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let three_d = spec.kind == BlockKind::Resnet3d;
        let kind = |k: usize, stride_t: usize, stride_s: usize| {
            let pad = k / 2;
            if three_d {
                ConvKind::Full3d {
                    k_t: k,
                    k,
                    conv: Conv3dParams {
                        stride_t,
                        stride_s,
                        pad_t: pad,
                        pad_s: pad,
                    },
                }
            } else {
                ConvKind::Spatial { k, stride: stride_s, pad }
            }
        };
        let (st, ss) = (spec.temporal_stride, spec.spatial_stride);
        let conv1 = ConvLayer::new(store, &format!("{name}.conv1"), kind(3, st, ss), spec.c_in, spec.c_out, seed)?;
        let bn1 = BnLayer::new(store, &format!("{name}.bn1"), spec.c_out);
        let conv2 = ConvLayer::new(store, &format!("{name}.conv2"), kind(3, 1, 1), spec.c_out, spec.c_out, seed)?;
        let bn2 = BnLayer::new(store, &format!("{name}.bn2"), spec.c_out);
        let shortcut = if spec.c_in != spec.c_out || st != 1 || ss != 1 {
            let conv = ConvLayer::new(store, &format!("{name}.shortcut"), kind(1, st, ss), spec.c_in, spec.c_out, seed)?;
            let bn = BnLayer::new(store, &format!("{name}.shortcut.bn"), spec.c_out);
            Some((conv, bn))
        } else {
            None
        };
        let tb_stride = match spec.kind {
            BlockKind::WideTb => Some(ss),
            BlockKind::DeepTb => Some(1),
            _ => None,
        };
        let tb = match (tb_stride, spec.tb) {
            (Some(stride), Some(cfg)) => Some(TbPath::new(store, &format!("{name}.tb"), cfg, stride, seed)?),
            _ => None,
        };
        Ok(ResBlock {
            name: name.to_string(),
            spec,
            conv1,
            bn1,
            conv2,
            bn2,
            shortcut,
            tb,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, ctx: &mut ForwardCtx<'_, T>) -> Result<Var> {
        let h = self.conv1.forward(g, store, x)?;
        let h = self.bn1.forward(g, store, h, ctx)?;
        let h = relu(g, h);
        let h = self.conv2.forward(g, store, h)?;
        let u = self.bn2.forward(g, store, h, ctx)?;
        let s = match &self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(g, store, x)?;
                bn.forward(g, store, s, ctx)?
            }
            None => x,
        };
        let mut out = add(g, s, u)?;
        if let Some(path) = &self.tb {
            let src = if self.spec.kind == BlockKind::DeepTb { u } else { x };
            let t = path.forward(g, store, src, ctx)?;
            out = add(g, out, t)?;
        }
        Ok(relu(g, out))
    }

    /// Appends this block's layers to `stack` and returns the output extents.
    pub fn describe(&self, input: ClipDims, stack: &mut LayerStack) -> Result<ClipDims> {
        let (h, e) = self.conv1.describe(input)?;
        stack.layers.push(e);
        stack.layers.push(self.bn1.describe(h));
        let (u, e) = self.conv2.describe(h)?;
        stack.layers.push(e);
        stack.layers.push(self.bn2.describe(u));
        if let Some((conv, bn)) = &self.shortcut {
            let (s, e) = conv.describe(input)?;
            stack.layers.push(e);
            stack.layers.push(bn.describe(s));
        }
        if let Some(path) = &self.tb {
            let tb = &path.tb;
            let src = if self.spec.kind == BlockKind::DeepTb { u } else { input };
            stack.layers.push(path.bn.describe(src));
            let cfg = tb.cfg;
            let (k, mid, p) = (cfg.temporal_kernel, cfg.bottleneck_width(), cfg.factors);
            let g1 = temporal_conv_geom(&src.shape(), &[mid, k, cfg.c_in], 1, tb.spatial_stride)?;
            let o = g1.output();
            let positions = o.t * o.h * o.w;
            stack.bottlenecks.push(BottleneckGroup {
                name: tb.name.clone(),
                first: stack.layers.len(),
                c: cfg.c_in,
                p,
            });
            stack.layers.push(LayerEntry::new(
                format!("{}.conv_in.weight", tb.name),
                LayerOp::TemporalConv {
                    c_in: cfg.c_in,
                    c_out: mid,
                    k,
                    positions,
                },
            ));
            stack.layers.push(LayerEntry::new(
                format!("{}.factor", tb.name),
                LayerOp::TbModule {
                    c_in: mid,
                    c_out: mid,
                    p,
                    positions,
                },
            ));
            stack.layers.push(LayerEntry::new(
                format!("{}.conv_out.weight", tb.name),
                LayerOp::TemporalConv {
                    c_in: mid,
                    c_out: cfg.c_out,
                    k,
                    positions,
                },
            ));
            stack.layers.push(path.norm.describe(o));
        }
        Ok(u)
    }
}
