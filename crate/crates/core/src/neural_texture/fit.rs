use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::optim::{linear_anneal, Adam};

use super::{NeuralTexture, SparseGradient, TextureError, TextureMap, UvPositionMap, Workspace, PBR_CHANNELS};

const CHUNK: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSchedule {
    pub iterations: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Texels drawn per iteration; all valid texels when the map is smaller.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FitSchedule {
    fn default() -> Self {
        Self { iterations: 1000, lr_start: 0.02, lr_end: 0.001, batch_size: 1 << 15, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    /// Mean squared texel error before each step.
    pub losses: Vec<f64>,
    /// Loss over all valid texels after the last step.
    pub final_loss: f64,
}

/// Loss and dense gradient of the mean squared error over `texels`.
fn loss_and_gradient(tex: &NeuralTexture, target: &TextureMap, uvpos: &UvPositionMap, texels: &[usize]) -> (f64, Vec<f64>) {
    let norm = 1.0 / (texels.len() * PBR_CHANNELS) as f64;
    let parts: Vec<(f64, SparseGradient)> = texels
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut ws = Workspace::default();
            let mut grad = SparseGradient::new(tex);
            let mut loss = 0.0;
            for &k in chunk {
                let out = tex.evaluate_into(uvpos.positions[k], &mut ws).to_array();
                let t = target.texels[k];
                let mut d = [0.0; PBR_CHANNELS];
                for c in 0..PBR_CHANNELS {
                    let r = out[c] - t[c];
                    loss += r * r;
                    d[c] = 2.0 * r * norm;
                }
                tex.backward(&ws, &d, &mut grad);
            }
            (loss, grad)
        })
        .collect();
    let mut dense = vec![0.0; tex.parameter_count()];
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        g.merge_into(&mut dense);
    }
    (loss * norm, dense)
}

pub fn texture_mse(tex: &NeuralTexture, target: &TextureMap, uvpos: &UvPositionMap) -> f64 {
    let idx: Vec<usize> = (0..uvpos.valid.len()).filter(|&k| uvpos.valid[k]).collect();
    let sum: f64 = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut ws = Workspace::default();
            chunk
                .iter()
                .map(|&k| {
                    let out = tex.evaluate_into(uvpos.positions[k], &mut ws).to_array();
                    out.iter().zip(&target.texels[k]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                })
                .sum::<f64>()
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    sum / (idx.len() * PBR_CHANNELS) as f64
}

/// Fits `tex` to a baked texture map by minimizing the mean squared texel
/// error over covered texels with Adam and a linearly annealed step size.
pub fn fit_neural_texture(
    tex: &mut NeuralTexture,
    target: &TextureMap,
    uvpos: &UvPositionMap,
    schedule: &FitSchedule,
) -> Result<FitReport, TextureError> {
    if target.width != uvpos.width || target.height != uvpos.height {
        return Err(TextureError::Shape(format!(
            "target {}x{} vs position map {}x{}",
            target.width, target.height, uvpos.width, uvpos.height
        )));
    }
    let valid: Vec<usize> = (0..uvpos.valid.len()).filter(|&k| uvpos.valid[k]).collect();
    if valid.is_empty() {
        return Err(TextureError::EmptyCoverage);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut adam = Adam::new(tex.parameter_count());
    let mut losses = Vec::with_capacity(schedule.iterations);
    for it in 0..schedule.iterations {
        let batch: Vec<usize> = if valid.len() <= schedule.batch_size {
            valid.clone()
        } else {
            let mut picks: Vec<usize> = sample(&mut rng, valid.len(), schedule.batch_size).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|i| valid[i]).collect()
        };
        let (loss, grad) = loss_and_gradient(tex, target, uvpos, &batch);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(TextureError::Diverged);
        }
        losses.push(loss);
        let lr = linear_anneal(schedule.lr_start, schedule.lr_end, it, schedule.iterations);
        adam.step(tex.params_mut(), &grad, lr);
        if tex.has_non_finite() {
            return Err(TextureError::Diverged);
        }
    }
    let final_loss = texture_mse(tex, target, uvpos);
    if !final_loss.is_finite() {
        return Err(TextureError::Diverged);
    }
    Ok(FitReport { losses, final_loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::unit_triangle;
    use crate::neural_texture::{HashEncodingConfig, NeuralTextureConfig};

    fn small() -> NeuralTextureConfig {
        NeuralTextureConfig {
            encoding: HashEncodingConfig { levels: 6, base_resolution: 4, growth: 1.5, log2_table_size: 12, features: 2 },
            hidden_width: 16,
            ..Default::default()
        }
    }

    #[test]
    fn midpoint_target_is_already_optimal() {
        let cfg = small();
        let uvpos = super::super::rasterize_uv_positions(&unit_triangle(), 16, 16).unwrap();
        let target = TextureMap::constant(16, 16, cfg.bounds.midpoint(), cfg.bounds).unwrap();
        let mut tex = NeuralTexture::new(cfg, 1).unwrap();
        let schedule = FitSchedule { iterations: 50, ..Default::default() };
        let report = fit_neural_texture(&mut tex, &target, &uvpos, &schedule).unwrap();
        assert!(report.final_loss < 1e-6);
    }

    #[test]
    fn fit_is_deterministic() {
        let cfg = small();
        let uvpos = super::super::rasterize_uv_positions(&unit_triangle(), 16, 16).unwrap();
        let target = TextureMap::from_fn(16, 16, cfg.bounds, |u, v| [u, v, 0.5, 0.3 + 0.5 * u, v]).unwrap();
        let schedule = FitSchedule { iterations: 20, batch_size: 50, ..Default::default() };
        let run = || {
            let mut tex = NeuralTexture::new(cfg, 2).unwrap();
            let r = fit_neural_texture(&mut tex, &target, &uvpos, &schedule).unwrap();
            (tex, r)
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert!(ra.final_loss < ra.losses[0]);
    }

    #[test]
    fn infinite_learning_rate_diverges() {
        let cfg = small();
        let uvpos = super::super::rasterize_uv_positions(&unit_triangle(), 8, 8).unwrap();
        let target = TextureMap::constant(8, 8, [1.0, 0.0, 1.0, 1.0, 0.0], cfg.bounds).unwrap();
        let mut tex = NeuralTexture::new(cfg, 3).unwrap();
        let schedule = FitSchedule { iterations: 5, lr_start: f64::INFINITY, lr_end: f64::INFINITY, ..Default::default() };
        assert!(matches!(fit_neural_texture(&mut tex, &target, &uvpos, &schedule), Err(TextureError::Diverged)));
    }
}
