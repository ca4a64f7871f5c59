//! Unfold + matrix-multiply convolution over N×T×C×H×W batches.
//!
//! One engine serves spatial (per-frame) 2-D convolution, 3-D convolution,
//! temporal convolution and 1×1 channel mixing. The unfolded patch matrix has
//! one row per kernel tap and one column per output position.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::tensor::{gemm, ClipDims, MatRef, Scalar, Tensor};

use super::graph::{Backward, BackwardCtx, Graph, Var};

/// Row order of the unfolded patch matrix, which fixes the weight layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TapOrder {
    /// Weight laid out as (C_out, C_in, k_t, k_h, k_w).
    ChannelMajor,
    /// Weight laid out as (C_out, k_t, k_h, k_w, C_in).
    TapMajor,
}

/// Temporal boundary handling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeBoundary {
    /// Out-of-range frame indices read zeros.
    Zero,
    /// Out-of-range frame indices clamp to the first/last frame.
    Replicate,
}

/// Full geometry of one convolution call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub input: ClipDims,
    pub cout: usize,
    pub kt: usize,
    pub kh: usize,
    pub kw: usize,
    pub st: usize,
    pub sh: usize,
    pub sw: usize,
    /// Input frame read by output frame `to` at tap `dt` is `to·st + t_offset + dt`.
    pub t_offset: isize,
    pub ph: usize,
    pub pw: usize,
    pub t_out: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub time_boundary: TimeBoundary,
    pub order: TapOrder,
}

impl ConvGeom {
    pub fn taps(&self) -> usize {
        self.input.c * self.kt * self.kh * self.kw
    }

    pub fn columns(&self) -> usize {
        self.input.n * self.t_out * self.h_out * self.w_out
    }

    pub fn output(&self) -> ClipDims {
        ClipDims {
            n: self.input.n,
            t: self.t_out,
            c: self.cout,
            h: self.h_out,
            w: self.w_out,
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match self.order {
            TapOrder::ChannelMajor => vec![self.cout, self.input.c, self.kt, self.kh, self.kw],
            TapOrder::TapMajor => vec![self.cout, self.kt, self.kh, self.kw, self.input.c],
        }
    }

    /// Output positions times taps times output channels.
    pub fn macs(&self) -> u64 {
        (self.columns() as u64) * (self.taps() as u64) * (self.cout as u64)
    }

    fn decode_row(&self, r: usize) -> (usize, usize, usize, usize) {
        let (kt, kh, kw, cin) = (self.kt, self.kh, self.kw, self.input.c);
        match self.order {
            TapOrder::ChannelMajor => {
                let dx = r % kw;
                let dy = (r / kw) % kh;
                let dt = (r / (kw * kh)) % kt;
                let ci = r / (kw * kh * kt);
                (ci, dt, dy, dx)
            }
            TapOrder::TapMajor => {
                let ci = r % cin;
                let rest = r / cin;
                let dx = rest % kw;
                let dy = (rest / kw) % kh;
                let dt = rest / (kw * kh);
                (ci, dt, dy, dx)
            }
        }
    }

    fn source_frame(&self, to: usize, dt: usize) -> Option<usize> {
        let ti = (to * self.st) as isize + self.t_offset + dt as isize;
        let last = self.input.t as isize - 1;
        match self.time_boundary {
            TimeBoundary::Replicate => Some(ti.clamp(0, last) as usize),
            TimeBoundary::Zero => (0..=last).contains(&ti).then_some(ti as usize),
        }
    }

    /// Valid output columns `lo..hi` for tap offset `dx` along one axis.
    fn valid_range(len: usize, out: usize, stride: usize, pad: usize, d: usize) -> (usize, usize) {
        // need 0 ≤ o·stride + d − pad < len
        let lo = pad.saturating_sub(d).div_ceil(stride);
        let hi = if len + pad > d {
            ((len + pad - d - 1) / stride + 1).min(out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    fn plane(&self) -> usize {
        self.h_out * self.w_out
    }

    /// Output frames unfolded at once: enough columns to keep the matrix
    /// multiply efficient while the patch block stays cache resident.
    fn frames_per_chunk(&self) -> usize {
        let columns = ((1 << 16) / self.taps().max(1)).max(512);
        (columns / self.plane().max(1)).max(1)
    }

    fn chunks(&self) -> impl Iterator<Item = Range<usize>> {
        let frames = self.input.n * self.t_out;
        let step = self.frames_per_chunk();
        (0..frames).step_by(step).map(move |s| s..(s + step).min(frames))
    }

    /// Walks every run of patch-matrix entries that read one input row, for
    /// the output frames `frames` (flattened batch × time). `f(dst, src,
    /// count)` covers `dst..dst + count` in the chunk's patch matrix and
    /// `src, src + sw, ...` in the input. Entries falling in zero padding are
    /// reported with `src = None`.
    fn for_each_run(&self, frames: &Range<usize>, mut f: impl FnMut(usize, Option<usize>, usize)) {
        let d = self.input;
        let plane = self.plane();
        let ncol = frames.len() * plane;
        let w_out = self.w_out;
        for r in 0..self.taps() {
            let (ci, dt, dy, dx) = self.decode_row(r);
            let (ho_lo, ho_hi) = Self::valid_range(d.h, self.h_out, self.sh, self.ph, dy);
            let (wo_lo, wo_hi) = Self::valid_range(d.w, w_out, self.sw, self.pw, dx);
            for (local, fi) in frames.clone().enumerate() {
                let (n, to) = (fi / self.t_out, fi % self.t_out);
                let col_base = r * ncol + local * plane;
                let source = self.source_frame(to, dt);
                let Some(ti) = source.filter(|_| wo_lo < wo_hi && ho_lo < ho_hi) else {
                    f(col_base, None, plane);
                    continue;
                };
                let frame_base = ((n * d.t + ti) * d.c + ci) * d.h * d.w;
                f(col_base, None, ho_lo * w_out);
                for ho in ho_lo..ho_hi {
                    let row = col_base + ho * w_out;
                    let hi = ho * self.sh + dy - self.ph;
                    let wi = wo_lo * self.sw + dx - self.pw;
                    f(row, None, wo_lo);
                    f(row + wo_lo, Some(frame_base + hi * d.w + wi), wo_hi - wo_lo);
                    f(row + wo_hi, None, w_out - wo_hi);
                }
                f(col_base + ho_hi * w_out, None, (self.h_out - ho_hi) * w_out);
            }
        }
    }

    /// Fills `cols` with the patch matrix of `frames`; every entry is written.
    fn im2col<T: Scalar>(&self, frames: &Range<usize>, x: &[T], cols: &mut Vec<T>) {
        cols.resize(self.taps() * frames.len() * self.plane(), T::zero());
        let sw = self.sw;
        self.for_each_run(frames, |dst, src, count| {
            let out = &mut cols[dst..dst + count];
            match src {
                None => out.fill(T::zero()),
                Some(src) if sw == 1 => out.copy_from_slice(&x[src..src + count]),
                Some(src) => {
                    for (o, v) in out.iter_mut().zip(x[src..].iter().step_by(sw)) {
                        *o = *v;
                    }
                }
            }
        });
    }

    fn col2im_add<T: Scalar>(&self, frames: &Range<usize>, cols: &[T], x: &mut [T]) {
        let sw = self.sw;
        self.for_each_run(frames, |dst, src, count| {
            let from = &cols[dst..dst + count];
            match src {
                None => {}
                Some(src) if sw == 1 => {
                    for (o, v) in x[src..src + count].iter_mut().zip(from) {
                        *o += *v;
                    }
                }
                Some(src) => {
                    for (o, v) in x[src..].iter_mut().step_by(sw).zip(from) {
                        *o += *v;
                    }
                }
            }
        });
    }

    /// Forward pass on raw buffers, one cache-sized block of frames at a time.
    pub(crate) fn forward<T: Scalar>(&self, x: &[T], w: &[T]) -> Vec<T> {
        let (k, cout, plane) = (self.taps(), self.cout, self.plane());
        let mut out = vec![T::zero(); self.input.n * self.t_out * cout * plane];
        let (mut cols, mut y) = (Vec::new(), Vec::new());
        for frames in self.chunks() {
            let ncol = frames.len() * plane;
            self.im2col(&frames, x, &mut cols);
            y.resize(cout * ncol, T::zero());
            gemm(
                cout,
                k,
                ncol,
                T::one(),
                MatRef::row_major(w, k),
                MatRef::row_major(&cols, ncol),
                T::zero(),
                &mut y,
            );
            for (local, f) in frames.enumerate() {
                for co in 0..cout {
                    let src = co * ncol + local * plane;
                    out[(f * cout + co) * plane..][..plane].copy_from_slice(&y[src..src + plane]);
                }
            }
        }
        out
    }

    /// Returns (grad wrt input, grad wrt weight) on request. Patches are
    /// unfolded again rather than kept from the forward pass.
    pub(crate) fn backward<T: Scalar>(&self, x: &[T], w: &[T], gy: &[T], need_x: bool, need_w: bool) -> (Option<Vec<T>>, Option<Vec<T>>) {
        let (k, cout, plane) = (self.taps(), self.cout, self.plane());
        let mut gw = need_w.then(|| vec![T::zero(); cout * k]);
        let mut gx = need_x.then(|| vec![T::zero(); x.len()]);
        let (mut cols, mut dy, mut dcols) = (Vec::new(), Vec::new(), Vec::new());
        for frames in self.chunks() {
            let ncol = frames.len() * plane;
            dy.resize(cout * ncol, T::zero());
            for (local, f) in frames.clone().enumerate() {
                for co in 0..cout {
                    let dst = co * ncol + local * plane;
                    dy[dst..dst + plane].copy_from_slice(&gy[(f * cout + co) * plane..][..plane]);
                }
            }
            if let Some(gw) = gw.as_mut() {
                self.im2col(&frames, x, &mut cols);
                gemm(
                    cout,
                    ncol,
                    k,
                    T::one(),
                    MatRef::row_major(&dy, ncol),
                    MatRef::transposed(&cols, ncol),
                    T::one(),
                    gw,
                );
            }
            if let Some(gx) = gx.as_mut() {
                dcols.resize(k * ncol, T::zero());
                gemm(
                    k,
                    cout,
                    ncol,
                    T::one(),
                    MatRef::transposed(w, k),
                    MatRef::row_major(&dy, ncol),
                    T::zero(),
                    &mut dcols,
                );
                self.col2im_add(&frames, &dcols, gx);
            }
        }
        (gx, gw)
    }
}

struct ConvBackward {
    geom: ConvGeom,
}

impl<T: Scalar> Backward<T> for ConvBackward {
    fn name(&self) -> &'static str {
        "conv"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let (gx, gw) = self
            .geom
            .backward(ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad, ctx.needs[0], ctx.needs[1]);
        vec![gx, gw]
    }
}

/// Records a convolution with explicit geometry. Shapes must already agree.
pub fn conv_with_geom<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var, geom: ConvGeom) -> Result<Var> {
    let (tx, tw) = (g.value(x), g.value(w));
    if tx.shape() != geom.input.shape() || tw.shape() != geom.weight_shape().as_slice() {
        return Err(Error::dims("conv", tx.shape(), tw.shape()));
    }
    let out = Tensor::from_vec(&geom.output().shape(), geom.forward(tx.data(), tw.data()))?;
    Ok(g.record(out, &[x, w], Box::new(ConvBackward { geom })))
}

fn out_extent(len: usize, k: usize, stride: usize, pad: usize, op: &'static str, input: &[usize], kernel: &[usize]) -> Result<usize> {
    if stride == 0 {
        return Err(Error::contract(op, "stride must be at least 1"));
    }
    if len + 2 * pad < k {
        return Err(Error::dims(op, input, kernel));
    }
    Ok((len + 2 * pad - k) / stride + 1)
}

/// Spatial geometry for a 2-D kernel applied independently at every frame.
pub fn conv2d_geom(input: &[usize], weight: &[usize], stride: usize, pad: usize) -> Result<ConvGeom> {
    const OP: &str = "conv2d_spatial";
    let d = ClipDims::of(input, OP)?;
    let &[cout, cin, kh, kw] = weight else {
        return Err(Error::contract(OP, format!("weight must be C_out×C_in×k×k, got {weight:?}")));
    };
    if cin != d.c {
        return Err(Error::dims(OP, input, weight));
    }
    let h_out = out_extent(d.h, kh, stride, pad, OP, input, weight)?;
    let w_out = out_extent(d.w, kw, stride, pad, OP, input, weight)?;
    Ok(ConvGeom {
        input: d,
        cout,
        kt: 1,
        kh,
        kw,
        st: 1,
        sh: stride,
        sw: stride,
        t_offset: 0,
        ph: pad,
        pw: pad,
        t_out: d.t,
        h_out,
        w_out,
        time_boundary: TimeBoundary::Zero,
        order: TapOrder::ChannelMajor,
    })
}

/// 2-D convolution applied per frame; `w` is C_out×C_in×k×k.
pub fn conv2d_spatial<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
    let mut geom = conv2d_geom(g.shape(x), g.shape(w), stride, pad)?;
    let ws = g.shape(w).to_vec();
    // weight has no temporal axis; view it as C_out×C_in×1×k×k
    let w5 = super::ops::reshape(g, w, &[ws[0], ws[1], 1, ws[2], ws[3]])?;
    geom.order = TapOrder::ChannelMajor;
    conv_with_geom(g, x, w5, geom)
}

/// Parameters of a 3-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3dParams {
    pub stride_t: usize,
    pub stride_s: usize,
    pub pad_t: usize,
    pub pad_s: usize,
}

pub fn conv3d_geom(input: &[usize], weight: &[usize], p: Conv3dParams) -> Result<ConvGeom> {
    const OP: &str = "conv3d";
    let d = ClipDims::of(input, OP)?;
    let &[cout, cin, kt, kh, kw] = weight else {
        return Err(Error::contract(OP, format!("weight must be C_out×C_in×k_t×k×k, got {weight:?}")));
    };
    if cin != d.c {
        return Err(Error::dims(OP, input, weight));
    }
    let t_out = out_extent(d.t, kt, p.stride_t, p.pad_t, OP, input, weight)?;
    let h_out = out_extent(d.h, kh, p.stride_s, p.pad_s, OP, input, weight)?;
    let w_out = out_extent(d.w, kw, p.stride_s, p.pad_s, OP, input, weight)?;
    Ok(ConvGeom {
        input: d,
        cout,
        kt,
        kh,
        kw,
        st: p.stride_t,
        sh: p.stride_s,
        sw: p.stride_s,
        t_offset: -(p.pad_t as isize),
        ph: p.pad_s,
        pw: p.pad_s,
        t_out,
        h_out,
        w_out,
        time_boundary: TimeBoundary::Replicate,
        order: TapOrder::ChannelMajor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::ops::sum_all;

    fn clip(shape: [usize; 5], f: impl Fn(usize) -> f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(&shape, (0..n).map(f).collect()).unwrap()
    }

    #[test]
    fn identity_1x1_kernel_is_identity() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(clip([2, 3, 2, 4, 5], |i| (i as f64).sin()));
        let w = g.constant(Tensor::from_f64(&[2, 2, 1, 1], &[1.0, 0.0, 0.0, 1.0]).unwrap());
        let y = conv2d_spatial(&mut g, x, w, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let x = clip([2, 1, 1, 4, 4], |i| ((i * 37 % 11) as f64) / 5.0 - 1.0);
        let w = Tensor::from_vec(&[1, 1, 3, 3], (0..9).map(|i| ((i * 13 % 7) as f64) / 3.0 - 1.0).collect()).unwrap();
        let rel = crate::gradcheck::check_fn(&[x, w], &|g, v| conv2d_spatial(g, v[0], v[1], 1, 1), 1e-5, usize::MAX, 1).unwrap();
        assert!(rel < 1e-5, "{rel}");
    }

    #[test]
    fn box_sum_of_delta() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(clip([1, 1, 1, 3, 3], |i| if i == 4 { 1.0 } else { 0.0 }));
        let w = g.constant(Tensor::ones(&[1, 1, 3, 3]));
        let y = conv2d_spatial(&mut g, x, w, 1, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1, 3, 3]);
        assert!(g.value(y).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn output_extent_follows_floor_rule() {
        let geom = conv2d_geom(&[1, 8, 3, 112, 112], &[64, 3, 7, 7], 2, 3).unwrap();
        assert_eq!((geom.h_out, geom.w_out, geom.t_out), (56, 56, 8));
        let geom = conv2d_geom(&[1, 8, 64, 56, 56], &[128, 64, 3, 3], 2, 1).unwrap();
        assert_eq!((geom.h_out, geom.w_out), (28, 28));
    }

    #[test]
    fn oversized_kernel_is_dimension_error() {
        assert!(matches!(
            conv2d_geom(&[1, 1, 1, 2, 2], &[1, 1, 5, 5], 1, 1),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            conv2d_geom(&[1, 1, 2, 4, 4], &[1, 3, 3, 3], 1, 1),
            Err(Error::Dimension { .. })
        ));
    }

    /// Direct nested-loop convolution against the unfold + gemm engine.
    fn check_against_loops(n: usize, t: usize, cin: usize, h: usize, w: usize, cout: usize, k: usize, stride: usize, pad: usize) {
        let x = clip([n, t, cin, h, w], |i| ((i * 37 % 101) as f64) / 50.0 - 1.0);
        let wt = Tensor::from_vec(
            &[cout, cin, k, k],
            (0..cout * cin * k * k).map(|i| ((i * 13 % 29) as f64) / 15.0 - 1.0).collect(),
        )
        .unwrap();
        let mut g = Graph::<f64>::new();
        let xv = g.constant(x.clone());
        let wv = g.constant(wt.clone());
        let y = conv2d_spatial(&mut g, xv, wv, stride, pad).unwrap();
        let out = g.value(y);
        let [_, _, _, ho, wo] = <[usize; 5]>::try_from(out.shape()).unwrap();
        let mut max_diff: f64 = 0.0;
        for b in 0..n {
            for f in 0..t {
                for co in 0..cout {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let mut acc = 0.0;
                            for ci in 0..cin {
                                for dy in 0..k {
                                    for dx in 0..k {
                                        let iy = (oy * stride + dy) as isize - pad as isize;
                                        let ix = (ox * stride + dx) as isize - pad as isize;
                                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                            continue;
                                        }
                                        let xi = (((b * t + f) * cin + ci) * h + iy as usize) * w + ix as usize;
                                        let wi = ((co * cin + ci) * k + dy) * k + dx;
                                        acc += x.data()[xi] * wt.data()[wi];
                                    }
                                }
                            }
                            let oi = (((b * t + f) * cout + co) * ho + oy) * wo + ox;
                            max_diff = max_diff.max((acc - out.data()[oi]).abs());
                        }
                    }
                }
            }
        }
        assert!(max_diff < 1e-12, "max diff {max_diff}");
    }

    #[test]
    fn loop_and_unfold_paths_agree() {
        check_against_loops(2, 3, 3, 6, 5, 4, 3, 2, 1);
    }

    #[test]
    fn chunked_unfold_covers_every_frame() {
        // 144 taps over 12×12 frames: a few frames per block, many blocks
        let geom = conv2d_geom(&[3, 8, 16, 12, 12], &[4, 16, 3, 3], 1, 1).unwrap();
        assert!(geom.frames_per_chunk() < 24);
        check_against_loops(3, 8, 16, 12, 12, 4, 3, 1, 1);
        check_against_loops(2, 5, 16, 9, 9, 3, 3, 2, 1);
    }

    #[test]
    fn weight_gradient_reaches_every_tap() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(clip([1, 1, 1, 3, 3], |_| 1.0));
        let w = g.leaf(Tensor::ones(&[1, 1, 3, 3]).with_requires_grad(true));
        let y = conv2d_spatial(&mut g, x, w, 1, 1).unwrap();
        let l = sum_all(&mut g, y).unwrap();
        g.backward(l).unwrap();
        // corner taps see 4 valid positions, edges 6, centre 9
        assert_eq!(g.grad(w).unwrap(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }
}
