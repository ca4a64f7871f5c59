use crate::autograd::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Momentum SGD with L2 weight decay folded into the velocity.
#[derive(Debug, Clone)]
pub struct Sgd<T: Scalar> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<T>>,
    steps: usize,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// `v ← μ·v + g + λ·θ`, `θ ← θ − lr·v`. Normalization scales and shifts
    /// get no decay. Parameters without a gradient are left alone.
    ///
    /// Nothing is modified when any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        for p in store.params() {
            if let Some(g) = p.tensor.grad() {
                if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Training {
                        step: self.steps,
                        msg: format!("non-finite gradient in {} at element {pos}", p.name),
                    });
                }
            }
        }
        if self.velocity.len() != store.params().len() {
            self.velocity = store.params().iter().map(|p| vec![T::zero(); p.tensor.numel()]).collect();
        }
        let (mu, lr) = (T::of(self.momentum), T::of(lr));
        for (p, v) in store.params_mut().iter_mut().zip(&mut self.velocity) {
            let wd = if p.kind.is_norm() { T::zero() } else { T::of(self.weight_decay) };
            let Some(g) = p.tensor.grad().map(<[T]>::to_vec) else { continue };
            for ((theta, vel), &gr) in p.tensor.data_mut().iter_mut().zip(v.iter_mut()).zip(&g) {
                *vel = mu * *vel + gr + wd * *theta;
                *theta -= lr * *vel;
            }
        }
        self.steps += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::ParamKind;
    use crate::tensor::Tensor;

    fn store_with(x: f64, kind: ParamKind) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("x", kind, Tensor::from_f64(&[1], &[x]).unwrap());
        s
    }

    fn set_grad(s: &mut ParamStore<f64>, g: f64) {
        let p = &mut s.params_mut()[0].tensor;
        p.clear_grad();
        p.accumulate_grad(&[g]);
    }

    fn value(s: &ParamStore<f64>) -> f64 {
        s.params()[0].tensor.data()[0]
    }

    #[test]
    fn vanilla_step() {
        let mut s = store_with(2.0, ParamKind::Weight);
        set_grad(&mut s, 0.5);
        Sgd::new(0.0, 0.0).step(&mut s, 0.1).unwrap();
        assert!((value(&s) - 1.95).abs() < 1e-15);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut s = store_with(1.0, ParamKind::Weight);
        let mut opt = Sgd::new(0.9, 0.0);
        // independent recurrence: v' = 0.9v + x, x' = x − 0.1v'
        let (mut x, mut v) = (1.0f64, 0.0f64);
        for _ in 0..200 {
            let cur = value(&s);
            set_grad(&mut s, cur);
            opt.step(&mut s, 0.1).unwrap();
            v = 0.9 * v + x;
            x -= 0.1 * v;
        }
        assert!(value(&s).abs() < 1e-3);
        assert!((value(&s) - x).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_alone_is_geometric() {
        let mut s = store_with(1.0, ParamKind::Weight);
        let mut opt = Sgd::new(0.0, 0.01);
        for k in 1..=10 {
            set_grad(&mut s, 0.0);
            opt.step(&mut s, 0.5).unwrap();
            assert!((value(&s) - (1.0f64 - 0.5 * 0.01).powi(k)).abs() < 1e-12);
        }
        let mut n = store_with(1.0, ParamKind::NormScale);
        set_grad(&mut n, 0.0);
        opt.step(&mut n, 0.5).unwrap();
        assert_eq!(value(&n), 1.0);
    }

    #[test]
    fn nan_gradient_reports_step() {
        let mut s = store_with(1.0, ParamKind::Weight);
        let mut opt = Sgd::new(0.9, 0.0);
        set_grad(&mut s, 1.0);
        opt.step(&mut s, 0.1).unwrap();
        set_grad(&mut s, f64::NAN);
        let before = value(&s);
        match opt.step(&mut s, 0.1) {
            Err(Error::Training { step, .. }) => assert_eq!(step, 1),
            other => panic!("{other:?}"),
        }
        assert_eq!(value(&s), before);
    }
}
