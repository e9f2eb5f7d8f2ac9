//! Per-iteration schedules: learning rate, interpolation weight, noise
//! interval and stage.

use super::config::{ScheduleConfig, Stage};
use crate::optim::linear_anneal;

/// Learning rate annealed linearly from `lr` to `lr · factor`.
pub fn lr_at(lr: f64, factor: f64, iteration: usize, total: usize) -> f64 {
    linear_anneal(lr, lr * factor, iteration, total)
}

/// λ annealed linearly from 1 to `end`.
pub fn lambda_at(end: f64, iteration: usize, total: usize) -> f64 {
    linear_anneal(1.0, end, iteration, total)
}

/// With annealing on, the upper bound moves linearly from `hi` to the
/// interval midpoint, so sampling shifts from high noise to low noise.
pub fn t_range_at(range: (u32, u32), anneal: bool, iteration: usize, total: usize) -> (u32, u32) {
    let (lo, hi) = range;
    if !anneal {
        return range;
    }
    let mid = (lo as f64 + hi as f64) / 2.0;
    let upper = linear_anneal(hi as f64, mid, iteration, total).round() as u32;
    (lo, upper.max(lo))
}

/// Index of the first iteration of each stage, plus `total` at the end.
pub fn stage_boundaries(stages: &[Stage], total: usize) -> Vec<usize> {
    let mut acc = 0.0;
    let mut out = vec![0];
    for s in &stages[..stages.len() - 1] {
        acc += s.fraction;
        out.push(((acc * total as f64).round() as usize).min(total));
    }
    out.push(total);
    out
}

pub fn stage_at(stages: &[Stage], iteration: usize, total: usize) -> usize {
    let b = stage_boundaries(stages, total);
    (0..stages.len()).rev().find(|&k| iteration >= b[k]).unwrap_or(0)
}

/// Everything that varies per step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepSchedule {
    pub stage: usize,
    pub resolution: usize,
    pub spp: u32,
    pub t_range: (u32, u32),
    pub lambda: f64,
    pub lr_texture: f64,
    pub lr_light: f64,
}

impl ScheduleConfig {
    pub fn at(&self, iteration: usize) -> StepSchedule {
        let total = self.total_iterations;
        let k = stage_at(&self.stages, iteration, total);
        let s = &self.stages[k];
        StepSchedule {
            stage: k,
            resolution: s.resolution,
            spp: s.spp,
            t_range: t_range_at(s.t_range, self.t_anneal, iteration, total),
            lambda: lambda_at(self.lambda_end, iteration, total),
            lr_texture: lr_at(self.lr_texture, self.lr_anneal, iteration, total),
            lr_light: lr_at(self.lr_light, self.lr_anneal, iteration, total),
        }
    }
}
