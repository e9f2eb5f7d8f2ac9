//! First-order optimizers and annealing schedules shared by the drivers.

use serde::{Deserialize, Serialize};

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], step_count: 0 }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

/// Linear interpolation from `start` (iteration 0) to `end` (iteration
/// `total - 1`), hitting both endpoints exactly.
pub fn linear_anneal(start: f64, end: f64, iteration: usize, total: usize) -> f64 {
    if total <= 1 || iteration == 0 {
        return start;
    }
    if iteration >= total - 1 {
        return end;
    }
    let f = iteration as f64 / (total - 1) as f64;
    start + (end - start) * f
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anneal_endpoints_are_exact() {
        assert_eq!(linear_anneal(0.02, 0.001, 0, 1000), 0.02);
        assert_eq!(linear_anneal(0.02, 0.001, 999, 1000), 0.001);
        assert!((linear_anneal(1.0, 0.0, 50, 101) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = Adam::new(2);
        for _ in 0..2000 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * (v - 1.0)).collect();
            opt.step(&mut x, &g, 0.01);
        }
        assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-3), "{x:?}");
    }
}
