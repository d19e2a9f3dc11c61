//! Adam with bias correction.

use alloc::vec;
use alloc::vec::Vec;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self { lr, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    /// One update of `params` against `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step_scaled(params, grad, &[1.0]);
    }

    /// Like [`Adam::step`] with coordinate `i` using `lr * scale[i % scale.len()]`.
    pub fn step_scaled(&mut self, params: &mut [f64], grad: &[f64], scale: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        let t = self.t as f64;
        let c1 = 1.0 - libm::pow(BETA1, t);
        let c2 = 1.0 - libm::pow(BETA2, t);
        let coords = params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut()));
        for (i, ((p, &g), (m, v))) in coords.enumerate() {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * scale[i % scale.len()] * m_hat / (libm::sqrt(v_hat) + EPSILON);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut opt = Adam::new(3, 0.1);
        let mut p = vec![1.0, -2.0, 0.5];
        opt.step(&mut p, &[3.0, -0.25, 0.0]);
        assert!((p[0] - 0.9).abs() < 1e-12);
        assert!((p[1] + 1.9).abs() < 1e-12);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn scaled_step() {
        let mut opt = Adam::new(4, 0.1);
        let mut p = vec![0.0; 4];
        opt.step_scaled(&mut p, &[1.0; 4], &[1.0, 0.01]);
        assert!((p[0] + 0.1).abs() < 1e-12 && (p[2] + 0.1).abs() < 1e-12);
        assert!((p[1] + 0.001).abs() < 1e-12 && (p[3] + 0.001).abs() < 1e-12);
    }
}
