//! Finite-difference verification of every backward rule, and of the
//! factorized bilinear form against its dense definition.
//!
//! Each check projects an op's output onto a fixed random tensor `r`, so the
//! scalar `L = Σ r ⊙ f(inputs)` exercises every output element. Analytic
//! gradients of `L` are compared with central differences; the error of one
//! instance is `‖a − n‖ / max(‖a‖, ‖n‖)` over the checked coordinates.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::conv::{conv2d_spatial, Conv3dParams};
use crate::autograd::ops::{
    batch_norm, elementwise, global_avg_pool, linear, mul, reduce_sum, relu, rms_norm, softmax_cross_entropy, sum_all, BinaryKind,
};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::network::{Arch, ForwardCtx, Model, NetworkConfig, TbSettings};
use crate::tb::{
    bilinear_dense_oracle, bottleneck_impl, expand_interaction_weights, tb_forward_impl, DropFactorMask, FactorWeight, TbFaults,
};
use crate::temporal::{conv3d, temporal_conv, temporal_pool, temporal_shift, temporal_shift_faulty, PoolMode};
use crate::tensor::Tensor;

/// Ops covered by the suite, in report order.
pub const OPS: [&str; 16] = [
    "elementwise",
    "reduce_sum",
    "linear",
    "softmax_cross_entropy",
    "relu",
    "global_avg_pool",
    "batch_norm",
    "rms_norm",
    "conv2d",
    "conv3d",
    "temporal_conv",
    "temporal_pool",
    "temporal_shift",
    "tb_forward",
    "bottleneck",
    "network",
];

/// Deliberately broken backward rules, used to show the checker catches them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Negated gradient in the temporal shift (and everything built on it).
    ShiftSign,
}

impl std::str::FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shift_sign" => Ok(Fault::ShiftSign),
            other => Err(Error::Config {
                stage: "gradcheck".into(),
                msg: format!("unknown fault {other:?}, expected shift_sign"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    /// Random instances per op.
    pub seeds: usize,
    pub base_seed: u64,
    /// Central-difference step.
    pub step: f64,
    pub tol: f64,
    pub network_tol: f64,
    /// Coordinates checked per input; larger inputs are subsampled.
    pub max_coords: usize,
    /// Random directions checked per network instance.
    pub directions: usize,
    /// Ops to run; empty means all.
    pub ops: Vec<String>,
    pub fault: Option<Fault>,
    /// Dense-oracle configurations; 0 skips the oracle suite.
    pub oracle_configs: usize,
    pub oracle_tol: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            seeds: 20,
            base_seed: 0,
            step: 1e-5,
            tol: 1e-4,
            network_tol: 1e-3,
            max_coords: 64,
            directions: 4,
            ops: Vec::new(),
            fault: None,
            oracle_configs: 100,
            oracle_tol: 1e-10,
        }
    }
}

impl GradcheckConfig {
    /// Selected ops, rejecting unknown names.
    pub fn selected_ops(&self) -> Result<Vec<&'static str>> {
        if let Some(bad) = self.ops.iter().find(|o| !OPS.contains(&o.as_str())) {
            return Err(Error::Config {
                stage: "gradcheck".into(),
                msg: format!("unknown op {bad:?}; known ops: {}", OPS.join(", ")),
            });
        }
        Ok(OPS
            .iter()
            .copied()
            .filter(|op| self.ops.is_empty() || self.ops.iter().any(|o| o == op))
            .collect())
    }

    fn tol_for(&self, op: &str) -> f64 {
        if op == "network" {
            self.network_tol
        } else {
            self.tol
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpResult {
    pub op: String,
    pub instances: usize,
    pub worst_rel: f64,
    pub worst_seed: u64,
    pub tol: f64,
    /// `(seed, relative error)` of every failing instance.
    pub failures: Vec<(u64, f64)>,
}

impl OpResult {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub configs: usize,
    pub elements: usize,
    pub max_abs_err: f64,
    pub tol: f64,
}

impl OracleResult {
    pub fn passed(&self) -> bool {
        self.max_abs_err < self.tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub ops: Vec<OpResult>,
    pub oracle: Option<OracleResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.ops.iter().all(OpResult::passed) && self.oracle.as_ref().is_none_or(OracleResult::passed)
    }
}

/// Runs the selected ops and, when configured, the dense-oracle suite.
pub fn run(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let ops = cfg
        .selected_ops()?
        .into_iter()
        .map(|op| check_op(op, cfg))
        .collect::<Result<Vec<_>>>()?;
    let oracle = (cfg.oracle_configs > 0)
        .then(|| oracle_equivalence(cfg.oracle_configs, cfg.base_seed, cfg.oracle_tol))
        .transpose()?;
    Ok(GradcheckReport { ops, oracle })
}

/// All instances of one op.
pub fn check_op(op: &str, cfg: &GradcheckConfig) -> Result<OpResult> {
    let tol = cfg.tol_for(op);
    let mut res = OpResult {
        op: op.to_string(),
        instances: cfg.seeds,
        worst_rel: 0.0,
        worst_seed: cfg.base_seed,
        tol,
        failures: Vec::new(),
    };
    for i in 0..cfg.seeds as u64 {
        let seed = cfg.base_seed.wrapping_add(i);
        let rel = check_instance(op, seed, cfg)?;
        // NaN counts as a failure
        if !(rel <= res.worst_rel) {
            res.worst_rel = rel;
            res.worst_seed = seed;
        }
        if !(rel < tol) {
            res.failures.push((seed, rel));
        }
    }
    Ok(res)
}

/// Relative error of one random instance of `op`.
pub fn check_instance(op: &str, seed: u64, cfg: &GradcheckConfig) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ op_salt(op));
    let faults = TbFaults {
        shift_sign: cfg.fault == Some(Fault::ShiftSign),
    };
    let check = |inputs: Vec<Tensor<f64>>, f: &dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>, rng: &mut ChaCha8Rng| {
        check_fn(&inputs, f, cfg.step, cfg.max_coords, rng.random())
    };
    match op {
        "elementwise" => {
            let a = uniform(
                &[rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=4)],
                &mut rng,
            );
            let tail = match rng.random_range(0..3) {
                0 => a.shape().to_vec(),
                1 => a.shape()[1..].to_vec(),
                _ => [&[1], &a.shape()[1..]].concat(),
            };
            let b = uniform(&tail, &mut rng);
            let kind = if rng.random::<bool>() { BinaryKind::Add } else { BinaryKind::Mul };
            check(vec![a, b], &|g, v| elementwise(g, v[0], v[1], kind), &mut rng)
        }
        "reduce_sum" => {
            let shape: Vec<usize> = (0..rng.random_range(1..=4)).map(|_| rng.random_range(1..=4)).collect();
            let axis = rng.random_range(0..shape.len());
            check(vec![uniform(&shape, &mut rng)], &|g, v| reduce_sum(g, v[0], axis), &mut rng)
        }
        "linear" => {
            let (n, ci, co) = (rng.random_range(1..=4), rng.random_range(1..=5), rng.random_range(1..=5));
            let inputs = vec![uniform(&[n, ci], &mut rng), uniform(&[co, ci], &mut rng), uniform(&[co], &mut rng)];
            check(inputs, &|g, v| linear(g, v[0], v[1], Some(v[2])), &mut rng)
        }
        "softmax_cross_entropy" => {
            let (n, k) = (rng.random_range(1..=4), rng.random_range(2..=5));
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let mut logits = uniform(&[n, k], &mut rng);
            logits.data_mut().iter_mut().for_each(|v| *v *= 3.0);
            check(vec![logits], &|g, v| softmax_cross_entropy(g, v[0], &labels), &mut rng)
        }
        "relu" => {
            let x = uniform(&[rng.random_range(1..=3), rng.random_range(1..=6)], &mut rng);
            check(vec![x], &|g, v| Ok(relu(g, v[0])), &mut rng)
        }
        "global_avg_pool" => {
            let x = uniform(&clip_shape(&mut rng, 4, 3), &mut rng);
            check(vec![x], &|g, v| global_avg_pool(g, v[0]), &mut rng)
        }
        "batch_norm" => {
            let shape = clip_shape(&mut rng, 3, 3);
            let c = shape[2];
            let inputs = vec![uniform(&shape, &mut rng), uniform(&[c], &mut rng), uniform(&[c], &mut rng)];
            check(inputs, &|g, v| Ok(batch_norm(g, v[0], v[1], v[2], None, 1e-5)?.0), &mut rng)
        }
        "rms_norm" => {
            let shape = clip_shape(&mut rng, 3, 3);
            let c = shape[2];
            let inputs = vec![uniform(&shape, &mut rng), uniform(&[c], &mut rng)];
            check(inputs, &|g, v| Ok(rms_norm(g, v[0], v[1], None, 1e-5)?.0), &mut rng)
        }
        "conv2d" => {
            let (k, stride, pad) = (rng.random_range(1..=3), rng.random_range(1..=2), rng.random_range(0..=1));
            let mut shape = clip_shape(&mut rng, 3, 3);
            shape[3] += k + 1;
            shape[4] += k;
            let co = rng.random_range(1..=3);
            let w = uniform(&[co, shape[2], k, k], &mut rng);
            check(
                vec![uniform(&shape, &mut rng), w],
                &|g, v| conv2d_spatial(g, v[0], v[1], stride, pad),
                &mut rng,
            )
        }
        "conv3d" => {
            let (kt, k) = (rng.random_range(1..=3), rng.random_range(1..=3));
            let p = Conv3dParams {
                stride_t: rng.random_range(1..=2),
                stride_s: rng.random_range(1..=2),
                pad_t: kt / 2,
                pad_s: rng.random_range(0..=1),
            };
            let mut shape = clip_shape(&mut rng, 3, 3);
            shape[1] += kt;
            shape[3] += k;
            shape[4] += k;
            let co = rng.random_range(1..=3);
            let w = uniform(&[co, shape[2], kt, k, k], &mut rng);
            check(vec![uniform(&shape, &mut rng), w], &|g, v| conv3d(g, v[0], v[1], p), &mut rng)
        }
        "temporal_conv" => {
            let (k, stride) = (2 * rng.random_range(0..=2) + 1, rng.random_range(1..=2));
            let shape = clip_shape(&mut rng, 5, 3);
            let co = rng.random_range(1..=3);
            let w = uniform(&[co, k, shape[2]], &mut rng);
            check(
                vec![uniform(&shape, &mut rng), w],
                &|g, v| temporal_conv(g, v[0], v[1], stride),
                &mut rng,
            )
        }
        "temporal_pool" => {
            let (k, stride) = (rng.random_range(1..=3), rng.random_range(1..=2));
            let mode = if rng.random::<bool>() { PoolMode::Max } else { PoolMode::Avg };
            let x = uniform(&clip_shape(&mut rng, 5, 3), &mut rng);
            check(vec![x], &|g, v| temporal_pool(g, v[0], k, stride, mode), &mut rng)
        }
        "temporal_shift" => {
            let x = uniform(&clip_shape(&mut rng, 5, 3), &mut rng);
            let shift = if faults.shift_sign {
                temporal_shift_faulty::<f64>
            } else {
                temporal_shift::<f64>
            };
            check(vec![x], &|g, v| shift(g, v[0]), &mut rng)
        }
        "tb_forward" => {
            let shape = clip_shape(&mut rng, 5, 3);
            let (co, p) = (rng.random_range(1..=3), rng.random_range(1..=4));
            let mask = random_mask(p, &mut rng);
            let f = uniform(&[co, p, shape[2]], &mut rng);
            check(
                vec![uniform(&shape, &mut rng), f],
                &|g, v| tb_forward_impl(g, v[0], v[1], mask.as_ref(), faults),
                &mut rng,
            )
        }
        "bottleneck" => {
            let mut shape = clip_shape(&mut rng, 5, 3);
            shape[2] = rng.random_range(2..=6);
            let (m, co, p) = (rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=3));
            let stride = rng.random_range(1..=2);
            let mask = random_mask(p, &mut rng);
            let inputs = vec![
                uniform(&shape, &mut rng),
                uniform(&[m, 3, shape[2]], &mut rng),
                uniform(&[m, p, m], &mut rng),
                uniform(&[co, 3, m], &mut rng),
            ];
            check(
                inputs,
                &|g, v| bottleneck_impl(g, v[0], [v[1], v[2], v[3]], stride, mask.as_ref(), faults),
                &mut rng,
            )
        }
        "network" => check_network(seed, cfg),
        other => Err(Error::Config {
            stage: "gradcheck".into(),
            msg: format!("unknown op {other:?}"),
        }),
    }
}

fn op_salt(op: &str) -> u64 {
    // FNV-1a, so each op draws an unrelated stream for the same seed
    op.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("positive extents")
}

/// Random N×T×C×H×W with T ≤ `max_t` and H, W ≤ `max_hw`.
fn clip_shape(rng: &mut ChaCha8Rng, max_t: usize, max_hw: usize) -> Vec<usize> {
    vec![
        rng.random_range(1..=2),
        rng.random_range(1..=max_t),
        rng.random_range(1..=3),
        rng.random_range(1..=max_hw),
        rng.random_range(1..=max_hw),
    ]
}

fn random_mask(p: usize, rng: &mut ChaCha8Rng) -> Option<DropFactorMask> {
    rng.random::<bool>()
        .then(|| DropFactorMask::sample(p, 0.5, rng).expect("valid keep probability"))
}

fn projected_loss(g: &mut Graph<f64>, out: Var, r: &Tensor<f64>) -> Result<Var> {
    let rv = g.constant(r.clone());
    let prod = mul(g, out, rv)?;
    sum_all(g, prod)
}

fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(n));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Checks the gradient of `Σ r ⊙ f(inputs)` with respect to every input.
/// Inputs with more than `max_coords` elements are checked on a random
/// subset of coordinates.
pub fn check_fn(
    inputs: &[Tensor<f64>],
    f: &dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    step: f64,
    max_coords: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eval = |values: &[Tensor<f64>], r: Option<&Tensor<f64>>| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.leaf(t.clone().with_requires_grad(true))).collect();
        let out = f(&mut g, &vars)?;
        let loss = match r {
            Some(r) => projected_loss(&mut g, out, r)?,
            None => out,
        };
        Ok((g, vars, loss))
    };
    let (g0, _, out) = eval(inputs, None)?;
    let r = uniform(g0.shape(out), &mut rng);
    drop(g0);

    let (mut g, vars, loss) = eval(inputs, Some(&r))?;
    g.backward(loss)?;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut values = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let n = values[i].numel();
        let grad = g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            sample(&mut rng, n, max_coords).into_vec()
        };
        for j in coords {
            let orig = values[i].data()[j];
            let mut side = |delta: f64| -> Result<f64> {
                values[i].data_mut()[j] = orig + delta;
                let (g, _, l) = eval(&values, Some(&r))?;
                Ok(g.value(l).data()[0])
            };
            let (plus, minus) = (side(step)?, side(-step)?);
            values[i].data_mut()[j] = orig;
            analytic.push(grad[j]);
            numeric.push((plus - minus) / (2.0 * step));
        }
    }
    Ok(rel_error(&analytic, &numeric))
}

/// Small network with every block kind; the architecture cycles with `seed`.
pub fn tiny_network_config(seed: u64) -> NetworkConfig {
    let arch = [Arch::C2d, Arch::C3d, Arch::Wtbn, Arch::Dtbn][(seed % 4) as usize];
    NetworkConfig {
        width_divisor: 16,
        blocks_per_stage: 1,
        frames: 8,
        height: 16,
        width: 16,
        tb: TbSettings {
            factors: 4,
            ..TbSettings::default()
        },
        ..NetworkConfig::desk(arch, 3)
    }
}

/// Directional check of the full training loss (batch statistics, no factor
/// masking) with respect to all parameters.
fn check_network(seed: u64, cfg: &GradcheckConfig) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ op_salt("network"));
    let net = tiny_network_config(seed);
    let mut model = Model::<f64>::new(net.clone(), seed)?;
    let n = 2;
    let mut shape = vec![n];
    shape.extend_from_slice(&net.clip_shape());
    let x = uniform(&shape, &mut rng);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..net.classes)).collect();
    let loss_of = |model: &Model<f64>, g: &mut Graph<f64>| -> Result<Var> {
        let xv = g.constant(x.clone());
        let mut ctx = ForwardCtx::train_deterministic();
        let logits = model.forward(g, xv, &mut ctx)?;
        softmax_cross_entropy(g, logits, &labels)
    };

    let mut g = Graph::new();
    let loss = loss_of(&model, &mut g)?;
    g.backward(loss)?;
    model.store.zero_grads();
    g.write_param_grads(&mut model.store);
    drop(g);
    let grads: Vec<Vec<f64>> = model
        .store
        .params()
        .iter()
        .map(|p| p.tensor.grad().map_or_else(|| vec![0.0; p.tensor.numel()], <[f64]>::to_vec))
        .collect();
    let original: Vec<Vec<f64>> = model.store.params().iter().map(|p| p.tensor.data().to_vec()).collect();

    let mut analytic = Vec::with_capacity(cfg.directions);
    let mut numeric = Vec::with_capacity(cfg.directions);
    for _ in 0..cfg.directions {
        let mut dir: Vec<Vec<f64>> = original
            .iter()
            .map(|p| p.iter().map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let norm = dir.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        dir.iter_mut().flatten().for_each(|v| *v /= norm);
        let mut side = |delta: f64| -> Result<f64> {
            for ((p, o), d) in model.store.params_mut().iter_mut().zip(&original).zip(&dir) {
                for ((v, &ov), &dv) in p.tensor.data_mut().iter_mut().zip(o).zip(d) {
                    *v = ov + delta * dv;
                }
            }
            let mut g = Graph::new();
            let l = loss_of(&model, &mut g)?;
            Ok(g.value(l).data()[0])
        };
        let (plus, minus) = (side(cfg.step)?, side(-cfg.step)?);
        numeric.push((plus - minus) / (2.0 * cfg.step));
        analytic.push(grads.iter().flatten().zip(dir.iter().flatten()).map(|(g, d)| g * d).sum());
    }
    Ok(rel_error(&analytic, &numeric))
}

/// Compares the factorized forward against `x_iᵀ W_c x_{i+1}` with the dense
/// `W_c = F_cᵀF_c`, over random configurations.
pub fn oracle_equivalence(configs: usize, seed: u64, tol: f64) -> Result<OracleResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ op_salt("oracle"));
    let mut res = OracleResult {
        configs,
        elements: 0,
        max_abs_err: 0.0,
        tol,
    };
    for _ in 0..configs {
        let c = rng.random_range(2..=8);
        let p = rng.random_range(1..=4);
        let t = rng.random_range(2..=6);
        let hw = rng.random_range(1..=3);
        let c_out = rng.random_range(1..=c);
        let x = uniform(&[1, t, c, hw, hw], &mut rng);
        let f = uniform(&[c_out, p, c], &mut rng);
        let mut g = Graph::new();
        let (xv, fv) = (g.constant(x.clone()), g.constant(f.clone()));
        let y = tb_forward_impl(&mut g, xv, fv, None, TbFaults::default())?;
        let y = g.value(y).data();
        let fw = FactorWeight::new(f)?;
        let dense = (0..c_out)
            .map(|co| expand_interaction_weights(&fw, co))
            .collect::<Result<Vec<_>>>()?;
        let plane = hw * hw;
        let pixel = |frame: usize, pos: usize| -> Vec<f64> { (0..c).map(|ch| x.data()[(frame * c + ch) * plane + pos]).collect() };
        for ti in 0..t {
            let next = (ti + 1).min(t - 1);
            for pos in 0..plane {
                let (a, b) = (pixel(ti, pos), pixel(next, pos));
                for (co, w) in dense.iter().enumerate() {
                    let want = bilinear_dense_oracle(&a, &b, w.data())?;
                    let got = y[(ti * c_out + co) * plane + pos];
                    res.max_abs_err = res.max_abs_err.max((got - want).abs());
                    res.elements += 1;
                }
            }
        }
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(op: &str) -> GradcheckConfig {
        GradcheckConfig {
            seeds: 3,
            ops: vec![op.to_string()],
            oracle_configs: 0,
            ..GradcheckConfig::default()
        }
    }

    #[test]
    fn every_op_passes_a_few_seeds() {
        for op in OPS {
            let r = check_op(op, &quick(op)).unwrap();
            assert!(r.passed(), "{op}: {r:?}");
        }
    }

    #[test]
    fn sign_fault_is_detected() {
        let cfg = GradcheckConfig {
            fault: Some(Fault::ShiftSign),
            ..quick("temporal_shift")
        };
        for op in ["temporal_shift", "tb_forward", "bottleneck"] {
            let r = check_op(op, &cfg).unwrap();
            assert!(!r.passed(), "{op}");
            assert!(r.worst_rel > 0.1, "{op}: {}", r.worst_rel);
        }
    }

    #[test]
    fn op_filter() {
        let cfg = quick("tb_forward");
        assert_eq!(cfg.selected_ops().unwrap(), vec!["tb_forward"]);
        let report = run(&cfg).unwrap();
        assert_eq!(report.ops.len(), 1);
        assert!(report.oracle.is_none());
        let bad = GradcheckConfig {
            ops: vec!["nope".into()],
            ..cfg
        };
        assert!(matches!(bad.selected_ops(), Err(Error::Config { .. })));
    }

    #[test]
    fn oracle_agrees() {
        let r = oracle_equivalence(10, 3, 1e-10).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.elements > 10);
    }

    #[test]
    fn relative_error_scale() {
        assert_eq!(rel_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((rel_error(&[1.0, 0.0], &[-1.0, 0.0]) - 2.0).abs() < 1e-15);
        assert!((rel_error(&[3.0, 4.0], &[3.0, 4.5]) - 0.1).abs() < 1e-2);
    }
}
