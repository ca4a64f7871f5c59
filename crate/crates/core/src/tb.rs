//! Temporal bilinear module: factorized pairwise interactions between the
//! features of adjacent frames, DropFactor masking, and the bottleneck block.
//!
//! For output channel `c` with factor matrix `F_c` (p × C_in), the module
//! computes `y_c = (F_c x^t)ᵀ (F_c x^{t+1})`, where `x^{t+1}` is produced by
//! [`temporal_shift`](crate::temporal::temporal_shift). This equals the dense
//! form `x^tᵀ W_c x^{t+1}` with `W_c = F_cᵀ F_c`.
//!
//! Factor-axis grouping: the channel-mixing convolution emits `C_out·p`
//! channels ordered output-channel-major, i.e. channel `c·p + q` holds factor
//! `q` of output `c`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::conv::conv2d_spatial;
use crate::autograd::ops::{mul, reduce_sum, reshape};
use crate::autograd::{Graph, ParamId, ParamKind, ParamStore, Var};
use crate::error::{Error, Result};
use crate::init::{he_init, stream_rng};
use crate::temporal::{temporal_conv_strided, temporal_shift, temporal_shift_faulty, temporal_window_bounds};
use crate::tensor::{ClipDims, Scalar, Tensor};

/// Per-output-channel factor matrices, shape (C_out × p × C_in).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorWeight<T: Scalar = f64> {
    tensor: Tensor<T>,
}

impl<T: Scalar> FactorWeight<T> {
    pub fn new(tensor: Tensor<T>) -> Result<Self> {
        if tensor.rank() != 3 {
            return Err(Error::contract(
                "factor_weight",
                format!("expected C_out×p×C_in, got {:?}", tensor.shape()),
            ));
        }
        Ok(FactorWeight { tensor })
    }

    pub fn c_out(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn factors(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn c_in(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.tensor
    }

    /// Row-major p × C_in matrix `F_c`.
    pub fn matrix(&self, c: usize) -> &[T] {
        let len = self.factors() * self.c_in();
        &self.tensor.data()[c * len..(c + 1) * len]
    }
}

/// Dense interaction matrix `W_c = F_cᵀF_c`, entry (j,k) = ⟨f_{·j}, f_{·k}⟩.
pub fn expand_interaction_weights<T: Scalar>(f: &FactorWeight<T>, c: usize) -> Result<Tensor<T>> {
    if c >= f.c_out() {
        return Err(Error::Index {
            op: "expand_interaction_weights",
            index: c,
            limit: f.c_out(),
        });
    }
    let (p, cin) = (f.factors(), f.c_in());
    let m = f.matrix(c);
    let mut w = vec![T::zero(); cin * cin];
    for j in 0..cin {
        for k in j..cin {
            let v: T = (0..p).map(|q| m[q * cin + j] * m[q * cin + k]).sum();
            w[j * cin + k] = v;
            w[k * cin + j] = v;
        }
    }
    Tensor::from_vec(&[cin, cin], w)
}

/// Reference `x_iᵀ W x_next` by explicit double loop; `w` is row-major C×C.
pub fn bilinear_dense_oracle(x_i: &[f64], x_next: &[f64], w: &[f64]) -> Result<f64> {
    let c = x_i.len();
    if x_next.len() != c || w.len() != c * c {
        return Err(Error::dims("bilinear_dense_oracle", &[c, x_next.len()], &[w.len()]));
    }
    let mut acc = 0.0;
    for j in 0..c {
        for k in 0..c {
            acc += x_i[j] * w[j * c + k] * x_next[k];
        }
    }
    Ok(acc)
}

/// Module hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TBConfig {
    pub c_in: usize,
    pub c_out: usize,
    /// Factor count p.
    pub factors: usize,
    pub dropfactor_keep: f64,
    pub bottleneck_reduction: usize,
    pub temporal_kernel: usize,
}

impl TBConfig {
    pub fn new(c_in: usize, c_out: usize) -> Self {
        TBConfig {
            c_in,
            c_out,
            factors: 20,
            dropfactor_keep: 0.5,
            bottleneck_reduction: 4,
            temporal_kernel: 3,
        }
    }

    pub fn bottleneck_width(&self) -> usize {
        self.c_out / self.bottleneck_reduction
    }

    pub fn validate(&self) -> Result<()> {
        const OP: &str = "tb_config";
        if self.factors == 0 {
            return Err(Error::contract(OP, "factor count must be at least 1"));
        }
        if !(self.dropfactor_keep > 0.0 && self.dropfactor_keep <= 1.0) {
            return Err(Error::contract(
                OP,
                format!("keep probability {} outside (0, 1]", self.dropfactor_keep),
            ));
        }
        if self.bottleneck_reduction == 0 || self.c_in % self.bottleneck_reduction != 0 || self.c_out % self.bottleneck_reduction != 0 {
            return Err(Error::contract(
                OP,
                format!(
                    "channels {}→{} not divisible by bottleneck reduction {}",
                    self.c_in, self.c_out, self.bottleneck_reduction
                ),
            ));
        }
        temporal_window_bounds(self.temporal_kernel)?;
        Ok(())
    }
}

/// Bernoulli keep-mask over the p factors with inverted scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct DropFactorMask {
    pub keep: Vec<bool>,
    pub keep_prob: f64,
    pub scale: f64,
}

impl DropFactorMask {
    /// All factors kept, scale 1 (evaluation).
    pub fn all(p: usize) -> Self {
        DropFactorMask {
            keep: vec![true; p],
            keep_prob: 1.0,
            scale: 1.0,
        }
    }

    pub fn sample(p: usize, keep: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(Error::contract(
                "dropfactor_sample",
                format!("keep probability {keep} outside (0, 1]"),
            ));
        }
        Ok(DropFactorMask {
            keep: (0..p).map(|_| rng.random::<f64>() < keep).collect(),
            keep_prob: keep,
            scale: 1.0 / keep,
        })
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    /// Per-factor multiplier: `scale` where kept, 0 where dropped.
    pub fn multipliers(&self) -> Vec<f64> {
        self.keep.iter().map(|&k| if k { self.scale } else { 0.0 }).collect()
    }
}

/// Draws a mask from a generator seeded with `seed`.
pub fn dropfactor_sample(p: usize, keep: f64, seed: u64) -> Result<DropFactorMask> {
    use rand::SeedableRng;
    DropFactorMask::sample(p, keep, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct TbFaults {
    pub shift_sign: bool,
}

/// Factorized temporal bilinear forward: conv with C_out·p filters, temporal
/// shift, elementwise product, optional factor mask, sum over the factor axis.
pub fn tb_forward<T: Scalar>(g: &mut Graph<T>, x: Var, factor: Var, mask: Option<&DropFactorMask>) -> Result<Var> {
    tb_forward_impl(g, x, factor, mask, TbFaults::default())
}

pub(crate) fn tb_forward_impl<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    factor: Var,
    mask: Option<&DropFactorMask>,
    faults: TbFaults,
) -> Result<Var> {
    const OP: &str = "tb_forward";
    let d = ClipDims::of(g.shape(x), OP)?;
    let &[c_out, p, c_in] = g.shape(factor) else {
        return Err(Error::contract(
            OP,
            format!("factor weight must be C_out×p×C_in, got {:?}", g.shape(factor)),
        ));
    };
    if c_in != d.c {
        return Err(Error::dims(OP, g.shape(x), g.shape(factor)));
    }
    if let Some(m) = mask {
        if m.len() != p {
            return Err(Error::contract(
                OP,
                format!("mask length {} differs from factor count {p}", m.len()),
            ));
        }
    }
    let filters = reshape(g, factor, &[c_out * p, c_in, 1, 1])?;
    let z = conv2d_spatial(g, x, filters, 1, 0)?;
    let z_next = if faults.shift_sign {
        temporal_shift_faulty(g, z)?
    } else {
        temporal_shift(g, z)?
    };
    let prod = mul(g, z, z_next)?;
    let mut prod = reshape(g, prod, &[d.n, d.t, c_out, p, d.h, d.w])?;
    if let Some(m) = mask {
        let plane = d.h * d.w;
        let data: Vec<T> = m
            .multipliers()
            .into_iter()
            .flat_map(|v| std::iter::repeat_n(T::of(v), plane))
            .collect();
        let mv = g.constant(Tensor::from_vec(&[p, d.h, d.w], data)?);
        prod = mul(g, prod, mv)?;
    }
    reduce_sum(g, prod, 3)
}

/// Layers whose temporal receptive fields compose in a stride-1 stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfsLayer {
    /// Per-frame operator (2-D conv, normalization, activation).
    Spatial,
    TemporalConv {
        k: usize,
    },
    Conv3d {
        k_t: usize,
    },
    /// Bilinear module: couples each frame with its successor.
    Tb,
}

impl RfsLayer {
    pub fn temporal_extent(self) -> usize {
        match self {
            RfsLayer::Spatial => 1,
            RfsLayer::TemporalConv { k } => k,
            RfsLayer::Conv3d { k_t } => k_t,
            RfsLayer::Tb => 2,
        }
    }
}

/// `1 + Σ (k_i − 1)` over a stride-1 stack.
pub fn temporal_rfs(layers: &[RfsLayer]) -> usize {
    1 + layers.iter().map(|l| l.temporal_extent().saturating_sub(1)).sum::<usize>()
}

/// Temporal conv (C_in → C_out/r) → bilinear module → temporal conv (C_out/r → C_out).
#[derive(Debug, Clone)]
pub struct BottleneckTb {
    pub name: String,
    pub cfg: TBConfig,
    /// Spatial subsampling applied by the first temporal convolution.
    pub spatial_stride: usize,
    pub conv_in: ParamId,
    pub factor: ParamId,
    pub conv_out: ParamId,
}

impl BottleneckTb {
    /// Registers the block's three weight tensors under `name`, each drawn
    /// from its own named stream of `seed`.
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, cfg: TBConfig, spatial_stride: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (k, mid, p) = (cfg.temporal_kernel, cfg.bottleneck_width(), cfg.factors);
        let mut param = |suffix: &str, kind: ParamKind, shape: &[usize], fan_in: usize| -> Result<ParamId> {
            let full = format!("{name}.{suffix}");
            let t = he_init(shape, fan_in, &mut stream_rng(seed, &full))?;
            Ok(store.add(full, kind, t))
        };
        let conv_in = param("conv_in.weight", ParamKind::Weight, &[mid, k, cfg.c_in], k * cfg.c_in)?;
        let factor = param("factor", ParamKind::Factor, &[mid, p, mid], mid * p)?;
        let conv_out = param("conv_out.weight", ParamKind::Weight, &[cfg.c_out, k, mid], k * mid)?;
        Ok(BottleneckTb {
            name: name.to_string(),
            cfg,
            spatial_stride,
            conv_in,
            factor,
            conv_out,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, mask: Option<&DropFactorMask>) -> Result<Var> {
        let w_in = g.param(store, self.conv_in);
        let f = g.param(store, self.factor);
        let w_out = g.param(store, self.conv_out);
        bottleneck_tb_block(g, x, [w_in, f, w_out], self.spatial_stride, mask)
    }

    pub fn rfs_layers(&self) -> [RfsLayer; 3] {
        let k = self.cfg.temporal_kernel;
        [RfsLayer::TemporalConv { k }, RfsLayer::Tb, RfsLayer::TemporalConv { k }]
    }

    /// Weight scalars: `k·C_in·m + m·p·m + k·m·C_out` with `m = C_out/r`.
    pub fn param_count(&self) -> usize {
        let (k, m, p) = (self.cfg.temporal_kernel, self.cfg.bottleneck_width(), self.cfg.factors);
        k * self.cfg.c_in * m + m * p * m + k * m * self.cfg.c_out
    }
}

/// Functional form of the bottleneck block on explicit weight handles
/// `[conv_in (m×k×C_in), factor (m×p×m), conv_out (C_out×k×m)]`.
pub fn bottleneck_tb_block<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    weights: [Var; 3],
    spatial_stride: usize,
    mask: Option<&DropFactorMask>,
) -> Result<Var> {
    bottleneck_impl(g, x, weights, spatial_stride, mask, TbFaults::default())
}

pub(crate) fn bottleneck_impl<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    [w_in, f, w_out]: [Var; 3],
    spatial_stride: usize,
    mask: Option<&DropFactorMask>,
    faults: TbFaults,
) -> Result<Var> {
    let h = temporal_conv_strided(g, x, w_in, 1, spatial_stride)?;
    let h = tb_forward_impl(g, h, f, mask, faults)?;
    temporal_conv_strided(g, h, w_out, 1, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::ops::sum_all;
    use rand::SeedableRng;

    #[test]
    fn dense_oracle_examples() {
        assert_eq!(
            bilinear_dense_oracle(&[1.0, 2.0], &[3.0, 4.0], &[1.0, 0.0, 0.0, 1.0]).unwrap(),
            11.0
        );
        assert_eq!(bilinear_dense_oracle(&[1.5, -2.0], &[3.0, 9.0], &[0.0; 4]).unwrap(), 0.0);
        // W = FᵀF with F = [[1, 0]]
        assert_eq!(bilinear_dense_oracle(&[2.0, 3.0], &[4.0, 5.0], &[1.0, 0.0, 0.0, 0.0]).unwrap(), 8.0);
        assert!(bilinear_dense_oracle(&[1.0], &[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn forward_matches_rank_one_example() {
        let mut g = Graph::<f64>::new();
        // two frames, x^1 = (2,3), x^2 = (4,5)
        let x = g.constant(Tensor::from_f64(&[1, 2, 2, 1, 1], &[2.0, 3.0, 4.0, 5.0]).unwrap());
        let f = g.constant(Tensor::from_f64(&[2, 1, 2], &[1.0, 0.0, 1.0, 0.0]).unwrap());
        let y = tb_forward(&mut g, x, f, None).unwrap();
        assert_eq!(g.shape(y), &[1, 2, 2, 1, 1]);
        assert_eq!(&g.value(y).data()[..2], &[8.0, 8.0]);
        // last frame pairs with itself: 4·4
        assert_eq!(&g.value(y).data()[2..], &[16.0, 16.0]);
    }

    #[test]
    fn zero_factors_give_zero_output_and_gradients() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(
            Tensor::from_f64(&[1, 3, 2, 2, 1], &[0.3, -1.0, 2.0, 0.5, 1.5, -0.2, 0.7, 0.1, -0.9, 1.1, 0.4, 2.2])
                .unwrap()
                .with_requires_grad(true),
        );
        let f = g.leaf(Tensor::zeros(&[2, 3, 2]).with_requires_grad(true));
        let y = tb_forward(&mut g, x, f, None).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
        let l = sum_all(&mut g, y).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(x).unwrap().iter().all(|&v| v == 0.0));
        assert!(g.grad(f).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_and_mask_errors() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::<f64>::zeros(&[1, 2, 3, 1, 1]));
        let f = g.constant(Tensor::zeros(&[2, 4, 2]));
        assert!(matches!(tb_forward(&mut g, x, f, None), Err(Error::Dimension { .. })));
        let f = g.constant(Tensor::zeros(&[2, 4, 3]));
        let mask = DropFactorMask::all(3);
        assert!(matches!(tb_forward(&mut g, x, f, Some(&mask)), Err(Error::Contract { .. })));
    }

    #[test]
    fn expansion_examples() {
        let f = FactorWeight::<f64>::new(Tensor::from_f64(&[1, 2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
        assert_eq!(expand_interaction_weights(&f, 0).unwrap().data(), &[1.0, 0.0, 0.0, 1.0]);
        let f = FactorWeight::<f64>::new(Tensor::from_f64(&[1, 1, 2], &[1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(expand_interaction_weights(&f, 0).unwrap().data(), &[1.0, 2.0, 2.0, 4.0]);
        assert!(expand_interaction_weights(&f, 1).is_err());
    }

    #[test]
    fn mask_sampling_contract() {
        let m = dropfactor_sample(20, 1.0, 5).unwrap();
        assert!(m.keep.iter().all(|&k| k));
        assert_eq!(m.scale, 1.0);
        assert!(dropfactor_sample(20, 0.0, 5).is_err());
        assert!(dropfactor_sample(20, 1.5, 5).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mut kept, mut total) = (0usize, 0usize);
        for _ in 0..100_000 {
            let m = DropFactorMask::sample(20, 0.5, &mut rng).unwrap();
            assert_eq!(m.scale, 2.0);
            kept += m.keep.iter().filter(|&&k| k).count();
            total += 20;
        }
        let rate = kept as f64 / total as f64;
        assert!((rate - 0.5).abs() < 0.01, "rate {rate}");
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        use rand::Rng;
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn forward_equals_dense_oracle_at_every_position() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (c, p, t, hw) = (4, 3, 5, 2);
        let x = random(&[1, t, c, hw, hw], &mut rng);
        let f = random(&[c, p, c], &mut rng);
        let mut g = Graph::<f64>::new();
        let (xv, fv) = (g.constant(x.clone()), g.constant(f.clone()));
        let y = tb_forward(&mut g, xv, fv, None).unwrap();
        let fw = FactorWeight::new(f).unwrap();
        let plane = hw * hw;
        let pixel = |ti: usize, pos: usize| -> Vec<f64> { (0..c).map(|ch| x.data()[(ti * c + ch) * plane + pos]).collect() };
        let mut diff = 0.0f64;
        for ti in 0..t {
            for pos in 0..plane {
                for co in 0..c {
                    let w = expand_interaction_weights(&fw, co).unwrap();
                    let want = bilinear_dense_oracle(&pixel(ti, pos), &pixel((ti + 1).min(t - 1), pos), w.data()).unwrap();
                    diff = diff.max((want - g.value(y).data()[(ti * c + co) * plane + pos]).abs());
                }
            }
        }
        assert!(diff < 1e-10, "{diff}");
    }

    fn forward_values(x: &Tensor<f64>, f: &Tensor<f64>, mask: Option<&DropFactorMask>) -> Vec<f64> {
        let mut g = Graph::<f64>::new();
        let (xv, fv) = (g.constant(x.clone()), g.constant(f.clone()));
        let y = tb_forward(&mut g, xv, fv, mask).unwrap();
        g.value(y).data().to_vec()
    }

    fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
        let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        d / b.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn masked_forward_is_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random(&[1, 3, 3, 1, 1], &mut rng);
        let f = random(&[2, 20, 3], &mut rng);
        let full = forward_values(&x, &f, None);
        let draws = 10_000;
        let mut mean = vec![0.0; full.len()];
        for _ in 0..draws {
            let m = DropFactorMask::sample(20, 0.5, &mut rng).unwrap();
            for (acc, v) in mean.iter_mut().zip(forward_values(&x, &f, Some(&m))) {
                *acc += v / draws as f64;
            }
        }
        let err = rel_diff(&mean, &full);
        assert!(err < 0.02, "{err}");
    }

    #[test]
    fn expansion_is_symmetric_and_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fw = FactorWeight::new(random(&[2, 3, 5], &mut rng)).unwrap();
        for c in 0..2 {
            let w = expand_interaction_weights(&fw, c).unwrap();
            let w = w.data();
            for j in 0..5 {
                for k in 0..5 {
                    assert_eq!(w[j * 5 + k], w[k * 5 + j]);
                }
            }
            for _ in 0..50 {
                let v: Vec<f64> = random(&[5], &mut rng).data().to_vec();
                assert!(bilinear_dense_oracle(&v, &v, w).unwrap() >= -1e-12);
            }
        }
    }

    #[test]
    fn output_scales_quadratically_with_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[1, 4, 3, 2, 2], &mut rng);
        let f = random(&[3, 4, 3], &mut rng);
        let alpha = -1.7;
        let mut scaled = x.clone();
        scaled.data_mut().iter_mut().for_each(|v| *v *= alpha);
        let base = forward_values(&x, &f, None);
        let want: Vec<f64> = base.iter().map(|v| v * alpha * alpha).collect();
        assert!(rel_diff(&forward_values(&scaled, &f, None), &want) < 1e-12);
    }

    #[test]
    fn dropping_a_factor_removes_its_rank_one_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[1, 3, 3, 2, 1], &mut rng);
        let f = random(&[2, 4, 3], &mut rng);
        let full = forward_values(&x, &f, None);
        let mut only = Tensor::<f64>::zeros(&[2, 4, 3]);
        let mut without = f.clone();
        for co in 0..2 {
            for k in 0..3 {
                let at = (co * 4 + 1) * 3 + k;
                only.data_mut()[at] = f.data()[at];
                without.data_mut()[at] = 0.0;
            }
        }
        let term = forward_values(&x, &only, None);
        let want: Vec<f64> = full.iter().zip(&term).map(|(a, b)| a - b).collect();
        let got = forward_values(&x, &without, None);
        assert!(rel_diff(&got, &want) < 1e-12);
        let mask = DropFactorMask {
            keep: vec![true, false, true, true],
            keep_prob: 1.0,
            scale: 1.0,
        };
        assert!(rel_diff(&forward_values(&x, &f, Some(&mask)), &want) < 1e-12);
    }

    #[test]
    fn rfs_examples() {
        assert_eq!(temporal_rfs(&[RfsLayer::Tb]), 2);
        assert_eq!(temporal_rfs(&[RfsLayer::Conv3d { k_t: 3 }]), 3);
        assert_eq!(
            temporal_rfs(&[RfsLayer::TemporalConv { k: 3 }, RfsLayer::Tb, RfsLayer::TemporalConv { k: 3 }]),
            6
        );
        assert_eq!(temporal_rfs(&[RfsLayer::Spatial]), 1);
    }

    #[test]
    fn bottleneck_parameter_count_at_64_channels() {
        let mut store = ParamStore::<f64>::new();
        let b = BottleneckTb::new(&mut store, "tb", TBConfig::new(64, 64), 1, 0).unwrap();
        assert_eq!(b.param_count(), 3 * 64 * 16 + 16 * 20 * 16 + 3 * 16 * 64);
        assert_eq!(b.param_count(), 11264);
        assert_eq!(store.num_scalars(), 11264);
        let layers = b.rfs_layers();
        assert_eq!(temporal_rfs(&layers), 6);
    }

    #[test]
    fn bottleneck_rejects_indivisible_channels() {
        let mut store = ParamStore::<f64>::new();
        assert!(BottleneckTb::new(&mut store, "tb", TBConfig::new(6, 6), 1, 0).is_err());
    }

    #[test]
    fn bottleneck_maps_zero_to_zero() {
        let mut store = ParamStore::<f64>::new();
        let b = BottleneckTb::new(&mut store, "tb", TBConfig::new(8, 8), 1, 3).unwrap();
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[2, 4, 8, 3, 3]));
        let y = b.forward(&mut g, &store, x, None).unwrap();
        assert_eq!(g.shape(y), &[2, 4, 8, 3, 3]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }
}
