//! Temporal aggregation operators: window bounds, pooling, temporal and 3-D
//! convolution, and the frame shift used by the bilinear module.
//!
//! All temporal operators share one boundary convention: frame indices outside
//! `[0, T)` clamp to the nearest valid frame.

use std::str::FromStr;

use crate::autograd::conv::{conv3d_geom, conv_with_geom, Conv3dParams, ConvGeom, TapOrder, TimeBoundary};
use crate::autograd::ops::reshape;
use crate::autograd::{Backward, BackwardCtx, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{ClipDims, Scalar, Tensor};

/// Offsets of the frames aggregated around a centre frame: `l ..= r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemporalWindow {
    pub k: usize,
    pub l: isize,
    pub r: isize,
}

impl TemporalWindow {
    pub fn offsets(&self) -> impl Iterator<Item = isize> {
        self.l..=self.r
    }
}

/// `l = 1 - floor((k+1)/2)`, `r = floor(k/2)`.
pub fn temporal_window_bounds(k: usize) -> Result<TemporalWindow> {
    if k == 0 {
        return Err(Error::contract("temporal_window_bounds", "kernel size must be at least 1"));
    }
    let k_i = k as isize;
    Ok(TemporalWindow {
        k,
        l: 1 - (k_i + 1) / 2,
        r: k_i / 2,
    })
}

fn clamp_frame(t: isize, len: usize) -> usize {
    t.clamp(0, len as isize - 1) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

impl FromStr for PoolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(PoolMode::Max),
            "avg" | "average" => Ok(PoolMode::Avg),
            other => Err(Error::contract("temporal_pool", format!("unknown pooling mode {other:?}"))),
        }
    }
}

struct PoolBackward {
    dims: ClipDims,
    t_out: usize,
    /// For max pooling: source frame of every output element; for average: unused.
    argmax: Vec<u32>,
    window: TemporalWindow,
    stride: usize,
    mode: PoolMode,
}

impl<T: Scalar> Backward<T> for PoolBackward {
    fn name(&self) -> &'static str {
        "temporal_pool"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let d = self.dims;
        let fl = d.frame_len();
        let mut gx = vec![T::zero(); d.n * d.t * fl];
        let inv_k = T::one() / T::of(self.window.k as f64);
        for n in 0..d.n {
            for to in 0..self.t_out {
                let out_base = (n * self.t_out + to) * fl;
                match self.mode {
                    PoolMode::Max => {
                        for e in 0..fl {
                            let src = self.argmax[out_base + e] as usize;
                            gx[(n * d.t + src) * fl + e] += ctx.grad[out_base + e];
                        }
                    }
                    PoolMode::Avg => {
                        for j in self.window.offsets() {
                            let src = clamp_frame((to * self.stride) as isize + j, d.t);
                            let dst = (n * d.t + src) * fl;
                            for e in 0..fl {
                                gx[dst + e] += ctx.grad[out_base + e] * inv_k;
                            }
                        }
                    }
                }
            }
        }
        vec![Some(gx)]
    }
}

/// Max or average over the window around every `stride`-th frame.
/// Output length is `ceil(T / stride)`.
pub fn temporal_pool<T: Scalar>(g: &mut Graph<T>, x: Var, k: usize, stride: usize, mode: PoolMode) -> Result<Var> {
    let window = temporal_window_bounds(k)?;
    if stride == 0 {
        return Err(Error::contract("temporal_pool", "stride must be at least 1"));
    }
    let tx = g.value(x);
    let d = ClipDims::of(tx.shape(), "temporal_pool")?;
    let t_out = d.t.div_ceil(stride);
    let fl = d.frame_len();
    let src = tx.data();
    let mut out = vec![T::zero(); d.n * t_out * fl];
    let mut argmax = Vec::new();
    if mode == PoolMode::Max {
        argmax = vec![0u32; out.len()];
    }
    let inv_k = T::one() / T::of(k as f64);
    for n in 0..d.n {
        for to in 0..t_out {
            let out_base = (n * t_out + to) * fl;
            let frames: Vec<usize> = window.offsets().map(|j| clamp_frame((to * stride) as isize + j, d.t)).collect();
            for e in 0..fl {
                match mode {
                    PoolMode::Max => {
                        let mut best = frames[0];
                        let mut best_v = src[(n * d.t + best) * fl + e];
                        for &f in &frames[1..] {
                            let v = src[(n * d.t + f) * fl + e];
                            if v > best_v {
                                best = f;
                                best_v = v;
                            }
                        }
                        out[out_base + e] = best_v;
                        argmax[out_base + e] = best as u32;
                    }
                    PoolMode::Avg => {
                        let s: T = frames.iter().map(|&f| src[(n * d.t + f) * fl + e]).sum();
                        out[out_base + e] = s * inv_k;
                    }
                }
            }
        }
    }
    let out = Tensor::from_vec(&[d.n, t_out, d.c, d.h, d.w], out)?;
    Ok(g.record(
        out,
        &[x],
        Box::new(PoolBackward {
            dims: d,
            t_out,
            argmax,
            window,
            stride,
            mode,
        }),
    ))
}

/// Geometry of a temporal convolution with weight C_out×k×C_in. `spatial_stride`
/// subsamples H and W (1×1 spatial footprint).
pub fn temporal_conv_geom(input: &[usize], weight: &[usize], stride: usize, spatial_stride: usize) -> Result<ConvGeom> {
    const OP: &str = "temporal_conv";
    let d = ClipDims::of(input, OP)?;
    let &[cout, k, cin] = weight else {
        return Err(Error::contract(OP, format!("weight must be C_out×k×C_in, got {weight:?}")));
    };
    if cin != d.c {
        return Err(Error::dims(OP, input, weight));
    }
    if stride == 0 || spatial_stride == 0 {
        return Err(Error::contract(OP, "strides must be at least 1"));
    }
    let window = temporal_window_bounds(k)?;
    Ok(ConvGeom {
        input: d,
        cout,
        kt: k,
        kh: 1,
        kw: 1,
        st: stride,
        sh: spatial_stride,
        sw: spatial_stride,
        t_offset: window.l,
        ph: 0,
        pw: 0,
        t_out: d.t.div_ceil(stride),
        h_out: d.h.div_ceil(spatial_stride),
        w_out: d.w.div_ceil(spatial_stride),
        time_boundary: TimeBoundary::Replicate,
        order: TapOrder::TapMajor,
    })
}

/// `y_c = Σ_j W_c^j x^{i+j}` over the window around each output frame.
pub fn temporal_conv<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var, stride: usize) -> Result<Var> {
    temporal_conv_strided(g, x, w, stride, 1)
}

/// [`temporal_conv`] with an additional spatial subsampling stride.
pub fn temporal_conv_strided<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var, stride: usize, spatial_stride: usize) -> Result<Var> {
    let geom = temporal_conv_geom(g.shape(x), g.shape(w), stride, spatial_stride)?;
    let w5 = reshape(g, w, &geom.weight_shape())?;
    conv_with_geom(g, x, w5, geom)
}

/// Standard 3-D convolution over (T, H, W); `w` is C_out×C_in×k_t×k×k.
/// Spatial padding reads zeros, temporal padding replicates boundary frames.
pub fn conv3d<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var, params: Conv3dParams) -> Result<Var> {
    let geom = conv3d_geom(g.shape(x), g.shape(w), params)?;
    conv_with_geom(g, x, w, geom)
}

struct ShiftBackward {
    dims: ClipDims,
    sign_fault: bool,
}

impl<T: Scalar> Backward<T> for ShiftBackward {
    fn name(&self) -> &'static str {
        "temporal_shift"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let d = self.dims;
        let fl = d.frame_len();
        let mut gx = vec![T::zero(); ctx.grad.len()];
        for n in 0..d.n {
            for t in 0..d.t {
                let src = (t + 1).min(d.t - 1);
                let (o, i) = ((n * d.t + t) * fl, (n * d.t + src) * fl);
                for e in 0..fl {
                    gx[i + e] += ctx.grad[o + e];
                }
            }
        }
        if self.sign_fault {
            gx.iter_mut().for_each(|v| *v = -*v);
        }
        vec![Some(gx)]
    }
}

/// `out[t] = x[t+1]` for `t < T-1`, last frame repeated.
pub fn temporal_shift<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    shift_impl(g, x, false)
}

/// Shift whose backward rule has its sign flipped. Exists only so the
/// gradient checker can prove it detects a broken rule.
#[doc(hidden)]
pub fn temporal_shift_faulty<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    shift_impl(g, x, true)
}

fn shift_impl<T: Scalar>(g: &mut Graph<T>, x: Var, sign_fault: bool) -> Result<Var> {
    let tx = g.value(x);
    let d = ClipDims::of(tx.shape(), "temporal_shift")?;
    let fl = d.frame_len();
    let src = tx.data();
    let mut out = Vec::with_capacity(src.len());
    for n in 0..d.n {
        for t in 0..d.t {
            let s = (n * d.t + (t + 1).min(d.t - 1)) * fl;
            out.extend_from_slice(&src[s..s + fl]);
        }
    }
    let out = Tensor::from_vec(tx.shape(), out)?;
    Ok(g.record(out, &[x], Box::new(ShiftBackward { dims: d, sign_fault })))
}
