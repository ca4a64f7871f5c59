use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::conv::Conv3dParams;
use crate::autograd::ops::{global_avg_pool, linear, relu};
use crate::autograd::{BufferId, Graph, ParamId, ParamKind, ParamStore, Var};
use crate::complexity::{LayerEntry, LayerOp, LayerStack};
use crate::error::{Error, Result};
use crate::init::{he_init, stream_rng};
use crate::tb::DropFactorMask;
use crate::tensor::{ClipDims, Scalar, Tensor};

use super::block::ResBlock;
use super::layers::{BnLayer, ConvKind, ConvLayer, BN_MOMENTUM};
use super::{Arch, NetworkConfig, STAGE_NAMES};

/// Per-forward state: mode, the factor-mask stream, normalization updates
/// waiting to be committed, and an optional record of stage output shapes.
pub struct ForwardCtx<'r, T: Scalar> {
    pub train: bool,
    rng: Option<&'r mut ChaCha8Rng>,
    /// Batch statistics to fold into running buffers.
    pub(crate) stat_updates: Vec<(BufferId, Vec<T>)>,
    pub trace: Vec<StageShape>,
}

impl<'r, T: Scalar> ForwardCtx<'r, T> {
    /// Running statistics, all factors kept.
    pub fn eval() -> Self {
        ForwardCtx {
            train: false,
            rng: None,
            stat_updates: Vec::new(),
            trace: Vec::new(),
        }
    }

    /// Batch statistics; factor masks drawn from `rng`.
    pub fn train(rng: &'r mut ChaCha8Rng) -> Self {
        ForwardCtx {
            train: true,
            rng: Some(rng),
            stat_updates: Vec::new(),
            trace: Vec::new(),
        }
    }

    /// Batch statistics without factor masking, so repeated forwards on the
    /// same input are deterministic (finite-difference checks).
    pub fn train_deterministic() -> Self {
        ForwardCtx {
            train: true,
            rng: None,
            stat_updates: Vec::new(),
            trace: Vec::new(),
        }
    }

    pub(crate) fn dropfactor_mask(&mut self, p: usize, keep: f64) -> Result<Option<DropFactorMask>> {
        match (&mut self.rng, self.train && keep < 1.0) {
            (Some(rng), true) => Ok(Some(DropFactorMask::sample(p, keep, rng)?)),
            _ => Ok(None),
        }
    }
}

/// Output extents of one stage for a single clip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageShape {
    pub stage: String,
    pub t: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl StageShape {
    fn of(stage: &str, d: ClipDims) -> Self {
        StageShape {
            stage: stage.to_string(),
            t: d.t,
            c: d.c,
            h: d.h,
            w: d.w,
        }
    }

    /// `T×H×W`.
    pub fn thw(&self) -> String {
        format!("{}×{}×{}", self.t, self.h, self.w)
    }
}

/// An assembled network and its parameters.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    pub cfg: NetworkConfig,
    pub store: ParamStore<T>,
    pub stem: (ConvLayer, BnLayer),
    pub stages: Vec<Vec<ResBlock>>,
    pub fc_weight: ParamId,
    pub fc_bias: ParamId,
}

impl<T: Scalar> Model<T> {
    /// Builds the network. Every parameter is drawn from a stream keyed by its
    /// name, so layers shared between architectures start identical.
    pub fn new(cfg: NetworkConfig, seed: u64) -> Result<Self> {
        let specs = cfg.block_specs()?;
        let mut store = ParamStore::new();
        let c0 = cfg.stem_channels();
        let stem_kind = match cfg.arch {
            Arch::C3d => ConvKind::Full3d {
                k_t: 3,
                k: 7,
                conv: Conv3dParams {
                    stride_t: 1,
                    stride_s: 2,
                    pad_t: 1,
                    pad_s: 3,
                },
            },
            _ => ConvKind::Spatial { k: 7, stride: 2, pad: 3 },
        };
        let stem_conv = ConvLayer::new(&mut store, "conv1", stem_kind, cfg.in_channels, c0, seed)?;
        let stem_bn = BnLayer::new(&mut store, "conv1.bn", c0);
        let mut stages = Vec::with_capacity(4);
        for (s, blocks) in specs.into_iter().enumerate() {
            let mut built = Vec::with_capacity(blocks.len());
            for (b, spec) in blocks.into_iter().enumerate() {
                let name = format!("{}.{b}", STAGE_NAMES[s]);
                let block = ResBlock::new(&mut store, &name, spec, seed).map_err(|e| Error::Config {
                    stage: STAGE_NAMES[s].into(),
                    msg: e.to_string(),
                })?;
                built.push(block);
            }
            stages.push(built);
        }
        let c_last = cfg.stage_width(3);
        let w = he_init(&[cfg.classes, c_last], c_last, &mut stream_rng(seed, "fc.weight"))?;
        let fc_weight = store.add("fc.weight", ParamKind::Weight, w);
        let fc_bias = store.add("fc.bias", ParamKind::Bias, Tensor::zeros(&[cfg.classes]));
        let model = Model {
            cfg,
            store,
            stem: (stem_conv, stem_bn),
            stages,
            fc_weight,
            fc_bias,
        };
        // fail early on inputs too small for the stack
        model.layer_stack()?;
        Ok(model)
    }

    pub fn blocks(&self) -> impl Iterator<Item = &ResBlock> {
        self.stages.iter().flatten()
    }

    pub fn tb_block_count(&self) -> usize {
        self.blocks().filter(|b| b.tb.is_some()).count()
    }

    /// Logits for an N×T×C×H×W batch already placed on `g`.
    pub fn forward(&self, g: &mut Graph<T>, x: Var, ctx: &mut ForwardCtx<'_, T>) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let want = self.cfg.clip_shape();
        if shape.len() != 5 || shape[1..] != want {
            let mut expected = vec![shape.first().copied().unwrap_or(1)];
            expected.extend_from_slice(&want);
            return Err(Error::dims("forward_classify", &shape, &expected));
        }
        let (conv, bn) = &self.stem;
        let h = conv.forward(g, &self.store, x)?;
        let h = bn.forward(g, &self.store, h, ctx)?;
        let mut h = relu(g, h);
        ctx.trace.push(StageShape::of("conv1", ClipDims::of(g.shape(h), "forward")?));
        for (s, blocks) in self.stages.iter().enumerate() {
            for block in blocks {
                h = block.forward(g, &self.store, h, ctx)?;
            }
            ctx.trace.push(StageShape::of(STAGE_NAMES[s], ClipDims::of(g.shape(h), "forward")?));
        }
        let pooled = global_avg_pool(g, h)?;
        let w = g.param(&self.store, self.fc_weight);
        let b = g.param(&self.store, self.fc_bias);
        linear(g, pooled, w, Some(b))
    }

    /// Folds the batch statistics gathered during a training forward into the
    /// running averages.
    pub fn commit(&mut self, ctx: ForwardCtx<'_, T>) {
        let m = T::of(BN_MOMENTUM);
        let keep = T::one() - m;
        for (id, stats) in ctx.stat_updates {
            for (r, &b) in self.store.buffer_mut(id).iter_mut().zip(&stats) {
                *r = keep * *r + m * b;
            }
        }
    }

    /// Eval-mode logits (N×classes) for a batch of clips.
    pub fn forward_classify(&self, clips: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.constant(clips.clone());
        let mut ctx = ForwardCtx::eval();
        let y = self.forward(&mut g, x, &mut ctx)?;
        Ok(g.value(y).clone())
    }

    /// Stage output shapes (conv1, res1..res4) from a real forward pass on a
    /// zero clip.
    pub fn stage_shapes(&self) -> Result<Vec<StageShape>> {
        let [t, c, h, w] = self.cfg.clip_shape();
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, t, c, h, w]));
        let mut ctx = ForwardCtx::eval();
        self.forward(&mut g, x, &mut ctx)?;
        Ok(ctx.trace)
    }

    /// Layer-by-layer description for complexity accounting.
    pub fn layer_stack(&self) -> Result<LayerStack> {
        let [t, c, h, w] = self.cfg.clip_shape();
        let mut d = ClipDims { n: 1, t, c, h, w };
        let mut stack = LayerStack::default();
        let (conv, bn) = &self.stem;
        let (out, e) = conv.describe(d).map_err(|e| stage_err("conv1", e))?;
        stack.layers.push(e);
        stack.layers.push(bn.describe(out));
        d = out;
        for (s, blocks) in self.stages.iter().enumerate() {
            for block in blocks {
                d = block.describe(d, &mut stack).map_err(|e| stage_err(STAGE_NAMES[s], e))?;
            }
        }
        stack.layers.push(LayerEntry::new(
            "fc",
            LayerOp::Linear {
                c_in: d.c,
                c_out: self.cfg.classes,
                bias: true,
            },
        ));
        Ok(stack)
    }

    /// Sets every bilinear factor tensor to zero.
    pub fn zero_tb_factors(&mut self) {
        for p in self.store.params_mut() {
            if p.kind == ParamKind::Factor {
                p.tensor.data_mut().iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }

    /// Parameter and buffer fingerprint.
    pub fn checksum(&self) -> u64 {
        self.store.checksum()
    }

    /// Same network in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            stem: self.stem.clone(),
            stages: self.stages.clone(),
            fc_weight: self.fc_weight,
            fc_bias: self.fc_bias,
        }
    }
}

fn stage_err(stage: &str, e: Error) -> Error {
    Error::Config {
        stage: stage.to_string(),
        msg: format!("shape propagation failed: {e}"),
    }
}
