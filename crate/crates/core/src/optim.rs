//! Adam updates over a [`ParameterSet`] and a drop-on-plateau step schedule.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::autodiff::{GradientRecord, ParameterSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<DMatrix<f64>>,
    v: Vec<DMatrix<f64>>,
}

impl Adam {
    pub fn new(params: &ParameterSet) -> Self {
        let zeros = params.zeros_like();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.tensors().to_vec(),
            v: zeros.tensors().to_vec(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParameterSet, grad: &GradientRecord, lr: f64) -> Result<()> {
        if !params.is_congruent(grad) || params.len() != self.m.len() {
            return Err(Error::Contract("optimizer state does not match the parameters".into()));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grad.tensors())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Multiplies the step size by `factor` after `patience` epochs without a
/// relative improvement of `min_rel_improvement`, never going below `min_lr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauSchedule {
    pub lr: f64,
    pub factor: f64,
    pub min_lr: f64,
    pub patience: usize,
    pub min_rel_improvement: f64,
    pub best: f64,
    pub stale_epochs: usize,
}

impl PlateauSchedule {
    pub fn new(lr: f64, factor: f64, min_lr: f64, patience: usize) -> Self {
        PlateauSchedule {
            lr,
            factor,
            min_lr,
            patience,
            min_rel_improvement: 1e-3,
            best: f64::INFINITY,
            stale_epochs: 0,
        }
    }

    /// Records a monitored loss; returns `true` when the step size dropped.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best * (1.0 - self.min_rel_improvement) || !self.best.is_finite() {
            self.best = loss;
            self.stale_epochs = 0;
            return false;
        }
        self.best = self.best.min(loss);
        self.stale_epochs += 1;
        if self.stale_epochs >= self.patience && self.lr > self.min_lr {
            self.lr = (self.lr * self.factor).max(self.min_lr);
            self.stale_epochs = 0;
            return true;
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = ParameterSet::new()
            .with("x", DMatrix::from_column_slice(2, 1, &[3.0, -2.0]))
            .unwrap();
        let mut adam = Adam::new(&p);
        for _ in 0..3000 {
            let mut g = p.zeros_like();
            let x = p.get("x").unwrap().clone();
            g.get_mut("x").unwrap().copy_from(&(x * 2.0));
            adam.step(&mut p, &g, 1e-2).unwrap();
        }
        assert!(p.get("x").unwrap().amax() < 1e-3);
    }

    #[test]
    fn first_adam_step_has_size_lr() {
        let mut p = ParameterSet::new().with("x", DMatrix::from_element(1, 1, 1.0)).unwrap();
        let mut adam = Adam::new(&p);
        let mut g = p.zeros_like();
        g.get_mut("x").unwrap()[0] = 123.0;
        adam.step(&mut p, &g, 0.1).unwrap();
        assert!((p.get("x").unwrap()[0] - 0.9).abs() < 1e-9);
    }

    #[test]
    fn plateau_drops_after_patience() {
        let mut s = PlateauSchedule::new(1e-3, 0.1, 1e-5, 2);
        assert!(!s.observe(1.0));
        assert!(!s.observe(1.0));
        assert!(s.observe(1.0));
        assert!((s.lr - 1e-4).abs() < 1e-15);
        s.observe(1.0);
        s.observe(1.0);
        s.observe(1.0);
        s.observe(1.0);
        assert_eq!(s.lr, 1e-5);
        assert!(!s.observe(0.5));
    }
}
