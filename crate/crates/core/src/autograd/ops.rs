//! Differentiable primitives recorded on a [`Graph`].

use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Scalar, Tensor};

use super::graph::{Backward, BackwardCtx, Graph, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Mul,
}

/// `b` broadcasts to `a` when its shape, stripped of leading 1s, equals the
/// trailing extents of `a`.
fn broadcast_len(a: &[usize], b: &[usize]) -> Option<usize> {
    let stripped: &[usize] = {
        let first = b.iter().position(|&d| d != 1).unwrap_or(b.len());
        &b[first..]
    };
    if stripped.len() > a.len() {
        return None;
    }
    let tail = &a[a.len() - stripped.len()..];
    (tail == stripped).then(|| stripped.iter().product())
}

/// `f(a[i], b[i mod b.len()])` for every element of `a`.
fn zip_broadcast<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    let mut out = Vec::with_capacity(a.len());
    for chunk in a.chunks(b.len().max(1)) {
        out.extend(chunk.iter().zip(b).map(|(&x, &y)| f(x, y)));
    }
    out
}

struct BinaryBackward {
    kind: BinaryKind,
}

impl<T: Scalar> Backward<T> for BinaryBackward {
    fn name(&self) -> &'static str {
        match self.kind {
            BinaryKind::Add => "add",
            BinaryKind::Mul => "mul",
        }
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let (a, b) = (ctx.inputs[0].data(), ctx.inputs[1].data());
        let bn = b.len();
        let g = ctx.grad;
        let ga = ctx.needs[0].then(|| match self.kind {
            BinaryKind::Add => g.to_vec(),
            BinaryKind::Mul => zip_broadcast(g, b, |gi, bi| gi * bi),
        });
        let gb = ctx.needs[1].then(|| {
            let mut out = vec![T::zero(); bn];
            for (chunk_g, chunk_a) in g.chunks(bn).zip(a.chunks(bn)) {
                match self.kind {
                    BinaryKind::Add => out.iter_mut().zip(chunk_g).for_each(|(o, &v)| *o += v),
                    BinaryKind::Mul => out
                        .iter_mut()
                        .zip(chunk_g.iter().zip(chunk_a))
                        .for_each(|(o, (&v, &x))| *o += v * x),
                }
            }
            out
        });
        vec![ga, gb]
    }
}

/// Elementwise `a ∘ b` with `b` optionally broadcast over leading extents of `a`.
pub fn elementwise<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var, kind: BinaryKind) -> Result<Var> {
    let (ta, tb) = (g.value(a), g.value(b));
    let bn = broadcast_len(ta.shape(), tb.shape()).ok_or_else(|| Error::dims("elementwise", ta.shape(), tb.shape()))?;
    let bd = tb.data();
    let data = match kind {
        BinaryKind::Add => zip_broadcast(ta.data(), &bd[..bn], |x, y| x + y),
        BinaryKind::Mul => zip_broadcast(ta.data(), &bd[..bn], |x, y| x * y),
    };
    let out = Tensor::from_vec(ta.shape(), data)?;
    Ok(g.record(out, &[a, b], Box::new(BinaryBackward { kind })))
}

pub fn add<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    elementwise(g, a, b, BinaryKind::Add)
}

pub fn mul<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    elementwise(g, a, b, BinaryKind::Mul)
}

struct ScaleBackward<T> {
    factor: T,
}

impl<T: Scalar> Backward<T> for ScaleBackward<T> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        vec![Some(ctx.grad.iter().map(|&v| v * self.factor).collect())]
    }
}

pub fn scale<T: Scalar>(g: &mut Graph<T>, a: Var, factor: T) -> Var {
    let ta = g.value(a);
    let out = Tensor::from_vec(ta.shape(), ta.data().iter().map(|&v| v * factor).collect()).expect("shape preserved");
    g.record(out, &[a], Box::new(ScaleBackward { factor }))
}

/// Splits `shape` around `axis` into (outer, extent, inner) block sizes.
pub(crate) fn axis_blocks(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

struct ReduceSumBackward {
    outer: usize,
    extent: usize,
    inner: usize,
}

impl<T: Scalar> Backward<T> for ReduceSumBackward {
    fn name(&self) -> &'static str {
        "reduce_sum"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let mut out = Vec::with_capacity(self.outer * self.extent * self.inner);
        for o in 0..self.outer {
            let src = &ctx.grad[o * self.inner..(o + 1) * self.inner];
            for _ in 0..self.extent {
                out.extend_from_slice(src);
            }
        }
        vec![Some(out)]
    }
}

/// Sums over one axis, removing it. A rank-1 input reduces to shape `[1]`.
pub fn reduce_sum<T: Scalar>(g: &mut Graph<T>, a: Var, axis: usize) -> Result<Var> {
    let ta = g.value(a);
    let shape = ta.shape();
    if axis >= shape.len() {
        return Err(Error::Index {
            op: "reduce_sum",
            index: axis,
            limit: shape.len(),
        });
    }
    let (outer, extent, inner) = axis_blocks(shape, axis);
    let src = ta.data();
    let mut data = vec![T::zero(); outer * inner];
    for o in 0..outer {
        let dst = &mut data[o * inner..(o + 1) * inner];
        for e in 0..extent {
            let base = (o * extent + e) * inner;
            dst.iter_mut().zip(&src[base..base + inner]).for_each(|(d, &s)| *d += s);
        }
    }
    let mut out_shape: Vec<usize> = shape.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &d)| d).collect();
    if out_shape.is_empty() {
        out_shape.push(1);
    }
    let out = Tensor::from_vec(&out_shape, data)?;
    Ok(g.record(out, &[a], Box::new(ReduceSumBackward { outer, extent, inner })))
}

/// Sum of all elements as a scalar.
pub fn sum_all<T: Scalar>(g: &mut Graph<T>, a: Var) -> Result<Var> {
    let n = g.value(a).numel();
    let flat = reshape(g, a, &[n])?;
    reduce_sum(g, flat, 0)
}

struct ReshapeBackward;

impl<T: Scalar> Backward<T> for ReshapeBackward {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        vec![Some(ctx.grad.to_vec())]
    }
}

pub fn reshape<T: Scalar>(g: &mut Graph<T>, a: Var, shape: &[usize]) -> Result<Var> {
    let out = g.value(a).reshaped(shape)?;
    Ok(g.record(out, &[a], Box::new(ReshapeBackward)))
}

struct ReluBackward;

impl<T: Scalar> Backward<T> for ReluBackward {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let y = ctx.output.data();
        vec![Some(
            ctx.grad
                .iter()
                .zip(y)
                .map(|(&gi, &yi)| if yi > T::zero() { gi } else { T::zero() })
                .collect(),
        )]
    }
}

pub fn relu<T: Scalar>(g: &mut Graph<T>, a: Var) -> Var {
    let ta = g.value(a);
    let out = Tensor::from_vec(ta.shape(), ta.data().iter().map(|&v| v.max(T::zero())).collect()).expect("shape preserved");
    g.record(out, &[a], Box::new(ReluBackward))
}

struct LinearBackward {
    n: usize,
    cin: usize,
    cout: usize,
}

impl<T: Scalar> Backward<T> for LinearBackward {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let (x, w) = (ctx.inputs[0].data(), ctx.inputs[1].data());
        let gy = ctx.grad;
        let (n, cin, cout) = (self.n, self.cin, self.cout);
        let gx = ctx.needs[0].then(|| {
            let mut gx = vec![T::zero(); n * cin];
            gemm(
                n,
                cout,
                cin,
                T::one(),
                MatRef::row_major(gy, cout),
                MatRef::row_major(w, cin),
                T::zero(),
                &mut gx,
            );
            gx
        });
        let gw = ctx.needs[1].then(|| {
            let mut gw = vec![T::zero(); cout * cin];
            gemm(
                cout,
                n,
                cin,
                T::one(),
                MatRef::transposed(gy, cout),
                MatRef::row_major(x, cin),
                T::zero(),
                &mut gw,
            );
            gw
        });
        let gb = ctx.needs.get(2).copied().unwrap_or(false).then(|| {
            let mut gb = vec![T::zero(); cout];
            for row in gy.chunks(cout) {
                gb.iter_mut().zip(row).for_each(|(b, &v)| *b += v);
            }
            gb
        });
        let mut out = vec![gx, gw];
        if ctx.inputs.len() == 3 {
            out.push(gb);
        }
        out
    }
}

/// `x (N×Cin) · wᵀ (Cin×Cout) + b`.
pub fn linear<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let (tx, tw) = (g.value(x), g.value(w));
    let (&[n, cin], &[cout, wcin]) = (tx.shape(), tw.shape()) else {
        return Err(Error::dims("linear", tx.shape(), tw.shape()));
    };
    if cin != wcin {
        return Err(Error::dims("linear", tx.shape(), tw.shape()));
    }
    let mut data = vec![T::zero(); n * cout];
    if let Some(b) = b {
        let tb = g.value(b);
        if tb.shape() != [cout] {
            return Err(Error::dims("linear", tw.shape(), tb.shape()));
        }
        for row in data.chunks_mut(cout) {
            row.copy_from_slice(tb.data());
        }
    }
    let beta = if b.is_some() { T::one() } else { T::zero() };
    gemm(
        n,
        cin,
        cout,
        T::one(),
        MatRef::row_major(tx.data(), cin),
        MatRef::transposed(tw.data(), cin),
        beta,
        &mut data,
    );
    let out = Tensor::from_vec(&[n, cout], data)?;
    let mut inputs = vec![x, w];
    inputs.extend(b);
    Ok(g.record(out, &inputs, Box::new(LinearBackward { n, cin, cout })))
}

struct SoftmaxCeBackward<T> {
    probs: Vec<T>,
    labels: Vec<usize>,
    k: usize,
}

impl<T: Scalar> Backward<T> for SoftmaxCeBackward<T> {
    fn name(&self) -> &'static str {
        "softmax_cross_entropy"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let n = self.labels.len();
        let scale = ctx.grad[0] / T::of(n as f64);
        let mut g: Vec<T> = self.probs.iter().map(|&p| p * scale).collect();
        for (i, &l) in self.labels.iter().enumerate() {
            g[i * self.k + l] -= scale;
        }
        vec![Some(g)]
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(logits: &[T], k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        out.extend(row.iter().map(|&v| (v - m).exp()));
        let z: T = out[start..].iter().copied().sum();
        out[start..].iter_mut().for_each(|v| *v = *v / z);
    }
    out
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn softmax_cross_entropy<T: Scalar>(g: &mut Graph<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    let tl = g.value(logits);
    let &[n, k] = tl.shape() else {
        return Err(Error::contract(
            "softmax_cross_entropy",
            format!("logits must be N×K, got {:?}", tl.shape()),
        ));
    };
    if labels.len() != n {
        return Err(Error::dims("softmax_cross_entropy", tl.shape(), &[labels.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Index {
            op: "softmax_cross_entropy",
            index: bad,
            limit: k,
        });
    }
    let mut loss = T::zero();
    for (row, &l) in tl.data().chunks(k).zip(labels) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - m).exp()).sum::<T>().ln() + m;
        loss += lse - row[l];
    }
    loss = loss / T::of(n as f64);
    let probs = softmax_rows(tl.data(), k);
    let out = Tensor::scalar(loss);
    Ok(g.record(
        out,
        &[logits],
        Box::new(SoftmaxCeBackward {
            probs,
            labels: labels.to_vec(),
            k,
        }),
    ))
}

struct GapBackward {
    n: usize,
    t: usize,
    c: usize,
    plane: usize,
}

impl<T: Scalar> Backward<T> for GapBackward {
    fn name(&self) -> &'static str {
        "global_avg_pool"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let inv = T::one() / T::of((self.t * self.plane) as f64);
        let mut out = vec![T::zero(); self.n * self.t * self.c * self.plane];
        for n in 0..self.n {
            for t in 0..self.t {
                for c in 0..self.c {
                    let v = ctx.grad[n * self.c + c] * inv;
                    let base = ((n * self.t + t) * self.c + c) * self.plane;
                    out[base..base + self.plane].iter_mut().for_each(|o| *o = v);
                }
            }
        }
        vec![Some(out)]
    }
}

/// Mean over (T, H, W) of an N×T×C×H×W batch, giving N×C.
pub fn global_avg_pool<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let tx = g.value(x);
    let d = crate::tensor::ClipDims::of(tx.shape(), "global_avg_pool")?;
    let plane = d.plane();
    let mut data = vec![T::zero(); d.n * d.c];
    let src = tx.data();
    for n in 0..d.n {
        for t in 0..d.t {
            for c in 0..d.c {
                let base = ((n * d.t + t) * d.c + c) * plane;
                data[n * d.c + c] += src[base..base + plane].iter().copied().sum::<T>();
            }
        }
    }
    let inv = T::one() / T::of((d.t * plane) as f64);
    data.iter_mut().for_each(|v| *v = *v * inv);
    let out = Tensor::from_vec(&[d.n, d.c], data)?;
    Ok(g.record(
        out,
        &[x],
        Box::new(GapBackward {
            n: d.n,
            t: d.t,
            c: d.c,
            plane,
        }),
    ))
}

/// Per-channel batch statistics returned by a training-mode normalization.
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

struct BatchNormBackward<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    frames: usize,
    c: usize,
    plane: usize,
    /// Statistics came from the batch itself (train mode).
    batch_stats: bool,
}

impl<T: Scalar> Backward<T> for BatchNormBackward<T> {
    fn name(&self) -> &'static str {
        "batch_norm"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let gamma = ctx.inputs[1].data();
        let gy = ctx.grad;
        let (frames, c, plane) = (self.frames, self.c, self.plane);
        let count = T::of((frames * plane) as f64);
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for f in 0..frames {
            for ch in 0..c {
                let base = (f * c + ch) * plane;
                let gs = &gy[base..base + plane];
                let xs = &self.xhat[base..base + plane];
                let mut a = T::zero();
                let mut b = T::zero();
                for (&gv, &xv) in gs.iter().zip(xs) {
                    a += gv;
                    b += gv * xv;
                }
                sum_g[ch] += a;
                sum_gx[ch] += b;
            }
        }
        let gx = ctx.needs[0].then(|| {
            let mut gx = vec![T::zero(); gy.len()];
            for f in 0..frames {
                for ch in 0..c {
                    let base = (f * c + ch) * plane;
                    let k = gamma[ch] * self.inv_std[ch];
                    if self.batch_stats {
                        let mg = sum_g[ch] / count;
                        let mgx = sum_gx[ch] / count;
                        for i in base..base + plane {
                            gx[i] = k * (gy[i] - mg - self.xhat[i] * mgx);
                        }
                    } else {
                        for i in base..base + plane {
                            gx[i] = k * gy[i];
                        }
                    }
                }
            }
            gx
        });
        let ggamma = ctx.needs[1].then(|| sum_gx.clone());
        let gbeta = ctx.needs[2].then(|| sum_g.clone());
        vec![gx, ggamma, gbeta]
    }
}

/// Per-channel normalization of an N×T×C×H×W batch over (N, T, H, W).
///
/// With `running = None` the batch statistics are used and returned;
/// otherwise the supplied (mean, var) pair is applied.
pub fn batch_norm<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    running: Option<(&[T], &[T])>,
    eps: T,
) -> Result<(Var, Option<BatchStats<T>>)> {
    let tx = g.value(x);
    let d = crate::tensor::ClipDims::of(tx.shape(), "batch_norm")?;
    let (gm, bt) = (g.value(gamma).data(), g.value(beta).data());
    if gm.len() != d.c || bt.len() != d.c {
        return Err(Error::dims("batch_norm", tx.shape(), g.value(gamma).shape()));
    }
    let (frames, c, plane) = (d.frames(), d.c, d.plane());
    let src = tx.data();
    let (mean, var, stats) = match running {
        Some((m, v)) => (m.to_vec(), v.to_vec(), false),
        None => {
            let count = T::of((frames * plane) as f64);
            let mut mean = vec![T::zero(); c];
            for f in 0..frames {
                for ch in 0..c {
                    let base = (f * c + ch) * plane;
                    mean[ch] += src[base..base + plane].iter().copied().sum::<T>();
                }
            }
            mean.iter_mut().for_each(|m| *m = *m / count);
            let mut var = vec![T::zero(); c];
            for f in 0..frames {
                for ch in 0..c {
                    let base = (f * c + ch) * plane;
                    let m = mean[ch];
                    var[ch] += src[base..base + plane].iter().map(|&v| (v - m) * (v - m)).sum::<T>();
                }
            }
            var.iter_mut().for_each(|v| *v = *v / count);
            (mean, var, true)
        }
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); src.len()];
    let mut out = vec![T::zero(); src.len()];
    for f in 0..frames {
        for ch in 0..c {
            let base = (f * c + ch) * plane;
            let (m, is, ga, be) = (mean[ch], inv_std[ch], gm[ch], bt[ch]);
            for i in base..base + plane {
                let h = (src[i] - m) * is;
                xhat[i] = h;
                out[i] = h * ga + be;
            }
        }
    }
    let out = Tensor::from_vec(tx.shape(), out)?;
    let v = g.record(
        out,
        &[x, gamma, beta],
        Box::new(BatchNormBackward {
            xhat,
            inv_std,
            frames,
            c,
            plane,
            batch_stats: stats,
        }),
    );
    Ok((v, stats.then_some(BatchStats { mean, var })))
}

struct RmsNormBackward<T> {
    inv_rms: Vec<T>,
    frames: usize,
    c: usize,
    plane: usize,
    batch_stats: bool,
}

impl<T: Scalar> Backward<T> for RmsNormBackward<T> {
    fn name(&self) -> &'static str {
        "rms_norm"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let (x, gamma) = (ctx.inputs[0].data(), ctx.inputs[1].data());
        let gy = ctx.grad;
        let (frames, c, plane) = (self.frames, self.c, self.plane);
        let mut sum_gx = vec![T::zero(); c];
        for f in 0..frames {
            for (ch, acc) in sum_gx.iter_mut().enumerate() {
                let base = (f * c + ch) * plane;
                *acc += gy[base..base + plane]
                    .iter()
                    .zip(&x[base..base + plane])
                    .map(|(&a, &b)| a * b)
                    .sum::<T>();
            }
        }
        let count = T::of((frames * plane) as f64);
        let gx = ctx.needs[0].then(|| {
            let mut gx = vec![T::zero(); gy.len()];
            for f in 0..frames {
                for ch in 0..c {
                    let base = (f * c + ch) * plane;
                    let r = self.inv_rms[ch];
                    let k = gamma[ch] * r;
                    // batch statistics: d r/d x_i = −r³ x_i / count
                    let corr = if self.batch_stats { r * r * sum_gx[ch] / count } else { T::zero() };
                    for i in base..base + plane {
                        gx[i] = k * (gy[i] - x[i] * corr);
                    }
                }
            }
            gx
        });
        let ggamma = ctx.needs[1].then(|| sum_gx.iter().zip(&self.inv_rms).map(|(&s, &r)| s * r).collect());
        vec![gx, ggamma]
    }
}

/// Per-channel scale normalization without centring: `γ·x / √(E[x²] + ε)`,
/// the mean square taken over (N, T, H, W). Zero input maps to zero output in
/// both modes.
///
/// With `running = None` the batch mean squares are used and returned.
pub fn rms_norm<T: Scalar>(g: &mut Graph<T>, x: Var, gamma: Var, running: Option<&[T]>, eps: T) -> Result<(Var, Option<Vec<T>>)> {
    let tx = g.value(x);
    let d = crate::tensor::ClipDims::of(tx.shape(), "rms_norm")?;
    let gm = g.value(gamma).data();
    if gm.len() != d.c {
        return Err(Error::dims("rms_norm", tx.shape(), g.value(gamma).shape()));
    }
    let (frames, c, plane) = (d.frames(), d.c, d.plane());
    let src = tx.data();
    let (ms, batch_stats) = match running {
        Some(r) => (r.to_vec(), false),
        None => {
            let mut ms = vec![T::zero(); c];
            for f in 0..frames {
                for (ch, acc) in ms.iter_mut().enumerate() {
                    let base = (f * c + ch) * plane;
                    *acc += src[base..base + plane].iter().map(|&v| v * v).sum::<T>();
                }
            }
            let count = T::of((frames * plane) as f64);
            ms.iter_mut().for_each(|m| *m = *m / count);
            (ms, true)
        }
    };
    let inv_rms: Vec<T> = ms.iter().map(|&m| T::one() / (m + eps).sqrt()).collect();
    let mut out = Vec::with_capacity(src.len());
    for frame in src.chunks(c * plane) {
        for (ch, xs) in frame.chunks(plane).enumerate() {
            let k = gm[ch] * inv_rms[ch];
            out.extend(xs.iter().map(|&v| v * k));
        }
    }
    let out = Tensor::from_vec(tx.shape(), out)?;
    let v = g.record(
        out,
        &[x, gamma],
        Box::new(RmsNormBackward {
            inv_rms,
            frames,
            c,
            plane,
            batch_stats,
        }),
    );
    Ok((v, batch_stats.then_some(ms)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(g: &mut Graph<f64>, shape: &[usize], data: &[f64]) -> Var {
        g.leaf(Tensor::from_f64(shape, data).unwrap().with_requires_grad(true))
    }

    #[test]
    fn add_and_mul_examples() {
        let mut g = Graph::<f64>::new();
        let a = leaf(&mut g, &[3], &[1.0, 2.0, 3.0]);
        let b = leaf(&mut g, &[3], &[4.0, 5.0, 6.0]);
        let s = add(&mut g, a, b).unwrap();
        assert_eq!(g.value(s).data(), &[5.0, 7.0, 9.0]);
        let ones = leaf(&mut g, &[3], &[1.0, 1.0, 1.0]);
        let p = mul(&mut g, a, ones).unwrap();
        assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn mul_gradient_is_opposite_operand() {
        let mut g = Graph::<f64>::new();
        let a = leaf(&mut g, &[2], &[2.0, 3.0]);
        let b = leaf(&mut g, &[2], &[5.0, 7.0]);
        let p = mul(&mut g, a, b).unwrap();
        let l = sum_all(&mut g, p).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[5.0, 7.0]);
        assert_eq!(g.grad(b).unwrap(), &[2.0, 3.0]);
    }

    #[test]
    fn broadcast_over_leading_extents() {
        let mut g = Graph::<f64>::new();
        let a = leaf(&mut g, &[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = leaf(&mut g, &[1, 3], &[10.0, 20.0, 30.0]);
        let s = add(&mut g, a, b).unwrap();
        assert_eq!(g.value(s).data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let l = sum_all(&mut g, s).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(b).unwrap(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn unresolvable_shapes_name_both_operands() {
        let mut g = Graph::<f64>::new();
        let a = leaf(&mut g, &[2, 3], &[0.0; 6]);
        let b = leaf(&mut g, &[2], &[0.0; 2]);
        match add(&mut g, a, b) {
            Err(Error::Dimension { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2]);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn reduce_sum_axes_and_range() {
        let mut g = Graph::<f64>::new();
        let a = leaf(&mut g, &[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let s0 = reduce_sum(&mut g, a, 0).unwrap();
        let s1 = reduce_sum(&mut g, a, 1).unwrap();
        assert_eq!(g.value(s0).data(), &[4.0, 6.0]);
        assert_eq!(g.value(s1).data(), &[3.0, 7.0]);
        assert!(matches!(reduce_sum(&mut g, a, 2), Err(Error::Index { .. })));
    }

    #[test]
    fn linear_examples_and_mismatch() {
        let mut g = Graph::<f64>::new();
        let x = leaf(&mut g, &[1, 2], &[1.0, 2.0]);
        let w = leaf(&mut g, &[1, 2], &[3.0, 4.0]);
        let b = leaf(&mut g, &[1], &[5.0]);
        let y = linear(&mut g, x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[16.0]);
        let bad = leaf(&mut g, &[1, 3], &[0.0; 3]);
        assert!(matches!(linear(&mut g, x, bad, None), Err(Error::Dimension { .. })));
    }

    #[test]
    fn cross_entropy_uniform_and_saturated() {
        let mut g = Graph::<f64>::new();
        let l = leaf(&mut g, &[1, 4], &[0.3; 4]);
        let loss = softmax_cross_entropy(&mut g, l, &[2]).unwrap();
        assert!((g.value(loss).data()[0] - 4f64.ln()).abs() < 1e-12);
        let s = leaf(&mut g, &[1, 2], &[1000.0, 0.0]);
        let loss = softmax_cross_entropy(&mut g, s, &[0]).unwrap();
        let v = g.value(loss).data()[0];
        assert!(v.is_finite() && v.abs() < 1e-12);
        assert!(matches!(softmax_cross_entropy(&mut g, s, &[2]), Err(Error::Index { .. })));
    }

    #[test]
    fn backward_rules_from_examples() {
        let mut g = Graph::<f64>::new();
        let a = leaf(&mut g, &[3], &[1.0, -2.0, 0.5]);
        let l = sum_all(&mut g, a).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::<f64>::new();
        let a = leaf(&mut g, &[1], &[3.0]);
        let sq = mul(&mut g, a, a).unwrap();
        let l = sum_all(&mut g, sq).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[6.0]);
        // second sweep accumulates
        g.backward(l).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[12.0]);
    }

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn mul_gradient_by_central_differences() {
        let b = [5.0, 7.0];
        let loss = |a: &[f64]| a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>();
        let h = 1e-6;
        let mut a = [2.0, 3.0];
        let mut numeric = [0.0; 2];
        for i in 0..2 {
            let orig = a[i];
            a[i] = orig + h;
            let plus = loss(&a);
            a[i] = orig - h;
            let minus = loss(&a);
            a[i] = orig;
            numeric[i] = (plus - minus) / (2.0 * h);
        }
        let mut g = Graph::<f64>::new();
        let av = leaf(&mut g, &[2], &a);
        let bv = g.constant(Tensor::from_f64(&[2], &b).unwrap());
        let p = mul(&mut g, av, bv).unwrap();
        let l = sum_all(&mut g, p).unwrap();
        g.backward(l).unwrap();
        let analytic = g.grad(av).unwrap();
        for i in 0..2 {
            assert!((analytic[i] - b[i]).abs() < 1e-12);
            assert!((numeric[i] - b[i]).abs() < 1e-6, "{numeric:?}");
        }
    }

    #[test]
    fn reduce_sum_gradient_is_all_ones() {
        let x = random(&[2, 3, 4], 1);
        for axis in 0..3 {
            let mut g = Graph::<f64>::new();
            let v = g.leaf(x.clone().with_requires_grad(true));
            let r = reduce_sum(&mut g, v, axis).unwrap();
            let l = sum_all(&mut g, r).unwrap();
            g.backward(l).unwrap();
            assert!(g.grad(v).unwrap().iter().all(|&d| d == 1.0));
        }
        let rel = crate::gradcheck::check_fn(&[x], &|g, v| reduce_sum(g, v[0], 1), 1e-5, usize::MAX, 2).unwrap();
        assert!(rel < 1e-8, "{rel}");
    }

    #[test]
    fn linear_and_cross_entropy_match_finite_differences() {
        use crate::gradcheck::check_fn;
        let inputs = [random(&[3, 4], 3), random(&[2, 4], 4), random(&[2], 5)];
        let rel = check_fn(&inputs, &|g, v| linear(g, v[0], v[1], Some(v[2])), 1e-5, usize::MAX, 6).unwrap();
        assert!(rel < 1e-5, "linear {rel}");
        let rel = check_fn(
            &[random(&[2, 3], 7)],
            &|g, v| softmax_cross_entropy(g, v[0], &[2, 0]),
            1e-5,
            usize::MAX,
            8,
        )
        .unwrap();
        assert!(rel < 1e-5, "cross entropy {rel}");
    }

    #[test]
    fn reduce_then_broadcast_round_trip() {
        // Σ broadcast(g) over a reduced extent of 3 equals 3·Σ g
        let mut g = Graph::<f64>::new();
        let gv = g.constant(Tensor::from_f64(&[2], &[0.5, -1.25]).unwrap());
        let z = g.constant(Tensor::zeros(&[3, 2]));
        let b = add(&mut g, z, gv).unwrap();
        let r = reduce_sum(&mut g, b, 0).unwrap();
        assert_eq!(g.value(r).data(), &[1.5, -3.75]);
    }

    #[test]
    fn rms_norm_keeps_zero_and_unit_scale() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 2, 2, 2]));
        let gamma = g.constant(Tensor::ones(&[2]));
        let (y, ms) = rms_norm(&mut g, x, gamma, None, 1e-5).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
        assert_eq!(ms.unwrap(), vec![0.0, 0.0]);
        let x = g.constant(random(&[2, 3, 2, 2, 2], 9));
        let (y, _) = rms_norm(&mut g, x, gamma, None, 0.0).unwrap();
        let y = g.value(y).data();
        for ch in 0..2 {
            let ms: f64 = (0..6)
                .flat_map(|f| (0..4).map(move |i| (f * 2 + ch) * 4 + i))
                .map(|i| y[i] * y[i])
                .sum::<f64>()
                / 24.0;
            assert!((ms - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f64>::new();
        let a = leaf(&mut g, &[2], &[1.0, 2.0]);
        assert!(matches!(g.backward(a), Err(Error::Contract { .. })));
    }

    #[test]
    fn ops_do_not_mutate_inputs() {
        let mut g = Graph::<f64>::new();
        let a = leaf(&mut g, &[2, 2], &[1.0, -2.0, 3.0, -4.0]);
        let before = g.value(a).clone();
        let r = relu(&mut g, a);
        let _ = reduce_sum(&mut g, r, 0).unwrap();
        assert_eq!(g.value(a).data(), before.data());
    }
}
