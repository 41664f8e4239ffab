//! Adam over a name-prefixed slice of a [`ParamStore`].

use std::collections::BTreeMap;

use super::store::ParamStore;
use super::tensor::Tensor;
use crate::error::{CoreError, Result};

/// One Adam instance per parameter group; `prefix` selects the group
/// (empty prefix = everything). Moment buffers are keyed by name and
/// created lazily, so the instance can outlive store growth.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    prefix: String,
    t: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64, prefix: &str) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            prefix: prefix.to_string(),
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Apply one update from the gradients currently stored for the
    /// group, then zero those gradients. Zero gradient leaves a
    /// parameter exactly unchanged.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut bad: Option<String> = None;
        store.for_each_mut(&self.prefix, |name, value, grad| {
            if bad.is_some() {
                return;
            }
            if !grad.all_finite() {
                bad = Some(name.to_string());
                return;
            }
            let ms = m
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(value.shape()));
            let vs = v
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(value.shape()));
            let (vd, gd) = (value.data_mut(), grad.data());
            for i in 0..gd.len() {
                let g = gd[i];
                let mi = b1 * ms.data()[i] + (1.0 - b1) * g;
                let vi = b2 * vs.data()[i] + (1.0 - b2) * g * g;
                ms.data_mut()[i] = mi;
                vs.data_mut()[i] = vi;
                vd[i] -= lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
            }
            grad.data_mut().fill(0.0);
        });
        match bad {
            Some(name) => Err(CoreError::NonFinite(format!("gradient of `{name}`"))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::store::GradMap;

    fn store_with(name: &str, v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(name, Tensor::scalar(v)).unwrap();
        s
    }

    #[test]
    fn moves_against_constant_gradient() {
        let mut s = store_with("p", 1.0);
        let mut opt = Adam::new(0.01, "");
        for _ in 0..100 {
            let mut gm = GradMap::new();
            gm.insert("p".into(), Tensor::scalar(2.0));
            s.accumulate(&gm).unwrap();
            opt.step(&mut s).unwrap();
        }
        let p = s.value("p").unwrap().item();
        assert!(p < 1.0 - 0.5, "barely moved: {p}");
        assert_eq!(opt.steps_taken(), 100);
    }

    #[test]
    fn first_step_size_is_lr() {
        // With bias correction, |Δ| of step 1 is lr·g/(|g|+ε') ≈ lr.
        let mut s = store_with("p", 0.0);
        let mut opt = Adam::new(0.05, "");
        let mut gm = GradMap::new();
        gm.insert("p".into(), Tensor::scalar(3.0));
        s.accumulate(&gm).unwrap();
        opt.step(&mut s).unwrap();
        let p = s.value("p").unwrap().item();
        assert!((p + 0.05).abs() < 1e-6, "step 1 moved {p}, expected ≈ -0.05");
    }

    #[test]
    fn zero_gradient_means_no_motion() {
        let mut s = store_with("p", 0.75);
        let mut opt = Adam::new(0.05, "");
        opt.step(&mut s).unwrap();
        assert_eq!(s.value("p").unwrap().item(), 0.75);
    }

    #[test]
    fn prefix_restricts_updates_and_grads_are_zeroed() {
        let mut s = ParamStore::new();
        s.insert("a.p", Tensor::scalar(1.0)).unwrap();
        s.insert("b.p", Tensor::scalar(1.0)).unwrap();
        let mut gm = GradMap::new();
        gm.insert("a.p".into(), Tensor::scalar(1.0));
        gm.insert("b.p".into(), Tensor::scalar(1.0));
        s.accumulate(&gm).unwrap();
        let mut opt = Adam::new(0.1, "a.");
        opt.step(&mut s).unwrap();
        assert!(s.value("a.p").unwrap().item() < 1.0);
        assert_eq!(s.value("b.p").unwrap().item(), 1.0);
        assert_eq!(s.grad("a.p").unwrap().item(), 0.0);
        // Out-of-group gradient is untouched.
        assert_eq!(s.grad("b.p").unwrap().item(), 1.0);
    }

    #[test]
    fn ten_steps_on_quadratic_strictly_shrink_x() {
        // f(x) = x² from x = 1 with lr 0.1; |x| must fall every step.
        let mut s = store_with("x", 1.0);
        let mut opt = Adam::new(0.1, "");
        let mut prev = 1.0f64;
        for step in 0..10 {
            let x = s.value("x").unwrap().item();
            let mut gm = GradMap::new();
            gm.insert("x".into(), Tensor::scalar(2.0 * x));
            s.accumulate(&gm).unwrap();
            opt.step(&mut s).unwrap();
            let nx = s.value("x").unwrap().item();
            assert!(nx.abs() < prev.abs(), "step {step}: |x| {} → {}", prev.abs(), nx.abs());
            prev = nx;
        }
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut s = store_with("p", 0.0);
        let mut gm = GradMap::new();
        gm.insert("p".into(), Tensor::scalar(f64::NAN));
        // accumulate succeeds (grads may transiently hold anything)…
        s.accumulate(&gm).unwrap();
        // …but the optimizer refuses to apply it.
        let mut opt = Adam::new(0.1, "");
        assert!(opt.step(&mut s).is_err());
    }
}
