use ndarray::{Array2, ArrayViewMut1, Zip};
use serde::{Deserialize, Serialize};

use super::params::{AdamState, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidParam(format!("adam lr must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidParam(format!("adam {name} must be in [0,1), got {b}")));
            }
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::InvalidParam(format!("clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

impl AdamState {
    /// One bias-corrected update of `value` at step `t` (1-based).
    pub fn update(&mut self, value: &mut Array2<f64>, grad: &Array2<f64>, t: u64, cfg: &AdamConfig) {
        let bc1 = 1.0 - cfg.beta1.powi(t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(t as i32);
        Zip::from(value)
            .and(&mut self.m)
            .and(&mut self.v)
            .and(grad)
            .for_each(|x, m, v, &g| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *x -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
            });
    }
}

/// Rescales the gradients in place so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut Array2<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let f = max_norm / norm;
        for g in grads.iter_mut() {
            g.mapv_inplace(|x| x * f);
        }
    }
    norm
}

/// Row-wise variant: each row is an independent problem with its own norm.
pub fn clip_row_norm(mut row: ArrayViewMut1<f64>, max_norm: f64) -> f64 {
    let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > max_norm {
        let f = max_norm / norm;
        row.mapv_inplace(|x| x * f);
    }
    norm
}

/// Clips (if configured) and applies one Adam step to every parameter, then
/// zeroes the gradients. Returns the pre-clip global gradient norm.
pub fn adam_step(store: &mut ParamStore, cfg: &AdamConfig) -> Result<f64> {
    for p in store.params() {
        if p.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
    }
    let norm = {
        let mut grads: Vec<&mut Array2<f64>> =
            store.params_mut().iter_mut().map(|p| &mut p.grad).collect();
        match cfg.clip_norm {
            Some(c) => clip_global_norm(&mut grads, c),
            None => grads
                .iter()
                .map(|g| g.iter().map(|x| x * x).sum::<f64>())
                .sum::<f64>()
                .sqrt(),
        }
    };
    let t = store.step_count() + 1;
    for p in store.params_mut() {
        p.adam.update(&mut p.value, &p.grad, t, cfg);
        p.grad.fill(0.0);
    }
    store.bump();
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_step_moves_by_lr() {
        for g0 in [1e-6, 0.3, 250.0, -7.0] {
            let mut store = ParamStore::new();
            let id = store.add("x", array![[1.0]]);
            store.add_grad(id, &array![[g0]]);
            let cfg = AdamConfig::with_lr(0.01);
            adam_step(&mut store, &cfg).unwrap();
            let delta = (store.value(id)[[0, 0]] - 1.0).abs();
            assert!(delta <= 0.01 * (1.0 + 1e-6), "delta {delta} for grad {g0}");
            assert!(delta > 0.0099 || g0.abs() < 1e-5);
        }
    }

    #[test]
    fn clip_to_norm() {
        let mut a = array![[6.0, 0.0]];
        let mut b = array![[0.0], [8.0]];
        let n = clip_global_norm(&mut [&mut a, &mut b], 5.0);
        assert_eq!(n, 10.0);
        let post = (a.iter().chain(b.iter()).map(|x| x * x).sum::<f64>()).sqrt();
        assert!((post - 5.0).abs() < 1e-12);
    }

    #[test]
    fn clip_is_identity_when_compliant() {
        let mut a = array![[1.0, 2.0]];
        let before = a.clone();
        clip_global_norm(&mut [&mut a], 5.0);
        assert_eq!(a, before);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut store = ParamStore::new();
        let id = store.add("x", array![[1.0]]);
        let cfg = AdamConfig::with_lr(0.05);
        for _ in 0..500 {
            let x = store.value(id)[[0, 0]];
            store.add_grad(id, &array![[2.0 * x]]);
            adam_step(&mut store, &cfg).unwrap();
        }
        assert!(store.value(id)[[0, 0]].abs() < 1e-3);
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut store = ParamStore::new();
        store.add("ok", array![[0.0]]);
        let bad = store.add("bad", array![[0.0]]);
        store.add_grad(bad, &array![[f64::NAN]]);
        match adam_step(&mut store, &AdamConfig::default()) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "bad"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
