//! Optimization drivers: light estimation, texture adaptation and
//! scene-agnostic texture generation, with their schedules, configuration
//! and checkpoints.

mod adapt;
mod checkpoint;
mod config;
mod generate;
mod light;
mod schedule;

pub use adapt::{run_texture_adaptation, AdaptInput, AdaptResult};
pub use checkpoint::{Checkpoint, RngState, RunKind, CHECKPOINT_VERSION};
pub use config::{
    AdaptConfig, BackgroundConfig, CropConfig, GenerateConfig, GuidanceSettings, LightConfig, RunConfig, ScheduleConfig,
    SgSampling, Stage, CONFIG_SCHEMA_VERSION,
};
pub use generate::{run_scene_agnostic_generation, GenerateInput, GenerateResult};
pub use light::{run_light_estimation, LightInput, LightResult};
pub use schedule::{lambda_at, lr_at, stage_at, stage_boundaries, t_range_at, StepSchedule};

use std::fmt;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::compositor::{CompositeError, Placement};
use crate::guidance::{GradientImage, GuidanceError, TimestepWeighting};
use crate::image::{GrayImage, RgbImage};
use crate::lighting::LightingError;
use crate::math::Rgb;
use crate::neural_texture::{NeuralTextureConfig, TextureError};
use crate::optim::Adam;
use crate::renderer::RenderError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error(transparent)]
    Composite(#[from] CompositeError),
    #[error(transparent)]
    Lighting(#[from] LightingError),
    #[error(transparent)]
    Texture(#[from] TextureError),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint corrupt")]
    CheckpointCorrupt,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("checkpoint does not match this run: {0}")]
    CheckpointMismatch(String),
    #[error("non-finite loss or parameters at iteration {iteration}")]
    NonFinite { iteration: usize },
}

/// Scene image and object placement for global views.
#[derive(Clone, Copy, Debug)]
pub struct SceneContext<'a> {
    /// Linear RGB.
    pub image: &'a RgbImage,
    pub placement: Placement,
}

/// Checkpointing and interruption controls shared by all drivers.
#[derive(Clone, Debug, Default)]
pub struct RunControl {
    pub checkpoint_path: Option<PathBuf>,
    /// Save every this many iterations; 0 saves only at the end.
    pub checkpoint_every: usize,
    /// Stop (and save) once this many iterations have completed.
    pub stop_after: Option<usize>,
    pub resume: Option<Checkpoint>,
}

/// One progress-log record.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub iteration: usize,
    /// Weighted `½‖g‖²` over all scored views; the photometric loss in
    /// oracle mode.
    pub loss: f64,
    pub lambda: f64,
    pub t_range: (u32, u32),
    pub lr: f64,
    pub stage: usize,
    pub loss_weights: Vec<f64>,
    /// Spherical-Gaussian parameters used to light the step, if any.
    pub env_params: Option<[f64; 5]>,
}

impl fmt::Display for StepLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iter {} loss {:.6e} lambda {:.4} t [{}, {}] lr {:.4e}",
            self.iteration, self.loss, self.lambda, self.t_range.0, self.t_range.1, self.lr
        )
    }
}

/// Whether a driver finished or stopped early on request.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    Stopped { at: usize },
}

/// Parameters, optimizer and RNG of a running driver.
pub(crate) struct RunState {
    pub kind: RunKind,
    pub iteration: usize,
    pub total: usize,
    pub seed: u64,
    pub params: Vec<f64>,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
    pub texture_config: Option<NeuralTextureConfig>,
}

impl RunState {
    pub fn start(
        kind: RunKind,
        params: Vec<f64>,
        seed: u64,
        total: usize,
        texture_config: Option<NeuralTextureConfig>,
        control: &RunControl,
    ) -> Result<Self, PipelineError> {
        if let Some(ck) = &control.resume {
            ck.check_compatible(kind, params.len(), total)?;
            if ck.texture_config != texture_config {
                return Err(PipelineError::CheckpointMismatch("texture configuration differs".into()));
            }
            return Ok(Self {
                kind,
                iteration: ck.iteration,
                total,
                seed: ck.seed,
                params: ck.params.clone(),
                adam: ck.adam.clone(),
                rng: ck.rng.restore(),
                texture_config,
            });
        }
        let n = params.len();
        Ok(Self { kind, iteration: 0, total, seed, params, adam: Adam::new(n), rng: ChaCha8Rng::seed_from_u64(seed), texture_config })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: self.kind,
            iteration: self.iteration,
            total_iterations: self.total,
            seed: self.seed,
            rng: RngState::capture(&self.rng),
            params: self.params.clone(),
            adam: self.adam.clone(),
            texture_config: self.texture_config,
        }
    }

    fn save(&self, control: &RunControl) -> Result<(), PipelineError> {
        if let Some(p) = &control.checkpoint_path {
            self.checkpoint().save(p)?;
        }
        Ok(())
    }

    /// Saves when the run should stop before the next step; returns
    /// whether it should stop.
    pub fn should_stop(&self, control: &RunControl) -> Result<bool, PipelineError> {
        if control.stop_after == Some(self.iteration) && self.iteration < self.total {
            self.save(control)?;
            return Ok(true);
        }
        Ok(false)
    }

    /// Bookkeeping after a completed step.
    pub fn advance(&mut self, control: &RunControl) -> Result<(), PipelineError> {
        self.iteration += 1;
        let periodic = control.checkpoint_every > 0 && self.iteration % control.checkpoint_every == 0;
        if periodic || self.iteration == self.total {
            self.save(control)?;
        }
        Ok(())
    }

    /// Saves the last good state and reports divergence.
    pub fn abort_non_finite(&self, control: &RunControl) -> PipelineError {
        if let Err(e) = self.save(control) {
            log::error!("could not save checkpoint after divergence: {e}");
        }
        PipelineError::NonFinite { iteration: self.iteration }
    }

    pub fn status(&self) -> RunStatus {
        if self.iteration >= self.total {
            RunStatus::Completed
        } else {
            RunStatus::Stopped { at: self.iteration }
        }
    }
}

pub(crate) fn sample_background(rng: &mut ChaCha8Rng, cfg: &BackgroundConfig) -> Rgb {
    // Always draw both so the stream does not depend on the outcome.
    let u: f64 = rng.gen();
    let color: Rgb = [rng.gen(), rng.gen(), rng.gen()];
    if u < cfg.augment_probability {
        color
    } else {
        cfg.default
    }
}

/// Applies the timestep weighting (remote scores only), the grazing weight
/// and the worker's loss weight; returns the render-space upstream gradient
/// and the weighted `½‖g‖²`.
pub(crate) fn finish_gradient(
    mut g: GradientImage,
    remote: bool,
    weighting: TimestepWeighting,
    view_dot_normal: Option<&GrayImage>,
    weight: f64,
) -> Result<(RgbImage, f64), PipelineError> {
    let energy = 0.5 * g.gradient.pixels().iter().flatten().map(|v| v * v).sum::<f64>();
    let mut k = weight;
    if remote {
        k *= weighting.factor(g.alpha_t);
    }
    if let Some(vdn) = view_dot_normal {
        crate::guidance::apply_grazing_weight(&mut g, vdn)?;
    }
    Ok((g.gradient.scaled(k), weight * energy))
}

pub(crate) fn add_into(acc: &mut RgbImage, g: &RgbImage) {
    for (a, b) in acc.pixels_mut().iter_mut().zip(g.pixels()) {
        for c in 0..3 {
            a[c] += b[c];
        }
    }
}

/// Nearest-neighbor upsampling by an integer factor.
pub fn upsample(img: &RgbImage, factor: usize) -> RgbImage {
    if factor == 1 {
        return img.clone();
    }
    RgbImage::from_fn(img.width() * factor, img.height() * factor, |x, y| img.get(x / factor, y / factor))
}

/// Adjoint of [`upsample`]: sums each `factor × factor` block.
pub fn upsample_adjoint(g: &RgbImage, factor: usize) -> RgbImage {
    if factor == 1 {
        return g.clone();
    }
    let (w, h) = (g.width() / factor, g.height() / factor);
    RgbImage::from_fn(w, h, |x, y| {
        let mut s = [0.0; 3];
        for dy in 0..factor {
            for dx in 0..factor {
                let p = g.get(x * factor + dx, y * factor + dy);
                for c in 0..3 {
                    s[c] += p[c];
                }
            }
        }
        s
    })
}
