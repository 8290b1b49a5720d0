//! Adam with bias correction.

use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::numerics::{Scalar, Tensor};
use crate::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam<S: Scalar = f32> {
    config: AdamConfig,
    step: i32,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig, params: &ParamSet<S>) -> Self {
        Self {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// One update with `grads` in parameter order.
    pub fn step(&mut self, params: &mut ParamSet<S>, grads: &[Tensor<S>]) {
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (S::from_f64(c.beta1), S::from_f64(c.beta2));
        let one = S::one();
        let corr1 = S::from_f64(1.0 - Float::powi(c.beta1, self.step));
        let corr2 = S::from_f64(1.0 - Float::powi(c.beta2, self.step));
        let lr = S::from_f64(c.lr);
        let eps = S::from_f64(c.eps);
        for (i, g) in grads.iter().enumerate() {
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let p = params.get_mut(i).data_mut();
            for j in 0..g.len() {
                let gj = g.data()[j];
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let mh = m[j] / corr1;
                let vh = v[j] / corr2;
                p[j] = p[j] - lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = ParamSet::<f64>::new();
        p.push("w", Tensor::from_rows(&[[1.0, -2.0, 0.5]]));
        let mut adam = Adam::new(AdamConfig { lr: 0.1, ..Default::default() }, &p);
        let g = Tensor::from_rows(&[[3.0, -0.01, 0.0]]);
        adam.step(&mut p, &[g]);
        let d = p.get(0).data();
        assert!((d[0] - 0.9).abs() < 1e-6);
        assert!((d[1] + 1.9).abs() < 1e-4);
        assert_eq!(d[2], 0.5);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut p = ParamSet::<f64>::new();
        p.push("x", Tensor::from_rows(&[[5.0, -3.0]]));
        let mut adam = Adam::new(AdamConfig { lr: 0.05, ..Default::default() }, &p);
        for _ in 0..2000 {
            let g = p.get(0).map(|v| 2.0 * (v - 1.0));
            adam.step(&mut p, &[g]);
        }
        assert!(p.get(0).data().iter().all(|v| (v - 1.0).abs() < 1e-3));
    }
}
