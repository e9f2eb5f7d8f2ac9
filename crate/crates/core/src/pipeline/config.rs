//! Versioned run configuration, read from and written to TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::guidance::{Injection, RemoteConfig, TimestepWeighting};
use crate::lighting::{LightScales, Thresholds, APPARATUS_LOSS_WEIGHTS};
use crate::math::Rgb;
use crate::neural_texture::{FitSchedule, NeuralTextureConfig};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// One resolution / sample-count / noise-range phase of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    /// Share of the total iterations spent in this stage.
    pub fraction: f64,
    pub resolution: usize,
    pub spp: u32,
    pub t_range: (u32, u32),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundConfig {
    pub default: Rgb,
    /// Probability of replacing the default with a uniform random color.
    pub augment_probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropConfig {
    pub count: usize,
    /// Crop side relative to the larger side of the object's box.
    pub scale_range: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub stages: Vec<Stage>,
    pub lr_texture: f64,
    pub lr_light: f64,
    pub lr_lora: f64,
    /// Learning rates end at `lr_anneal ×` their start value.
    pub lr_anneal: f64,
    pub total_iterations: usize,
    pub workers: usize,
    /// Per-worker loss weights.
    pub loss_weights: Vec<f64>,
    pub background: BackgroundConfig,
    pub global_crops: CropConfig,
    /// Shrink the noise interval toward its low end over the run.
    pub t_anneal: bool,
    /// Final value of the score interpolation weight, annealed from 1.
    pub lambda_end: f64,
}

impl ScheduleConfig {
    fn base(total_iterations: usize, stages: Vec<Stage>) -> Self {
        Self {
            stages,
            lr_texture: 0.001,
            lr_light: 0.01,
            lr_lora: 0.0001,
            lr_anneal: 1.0,
            total_iterations,
            workers: 4,
            loss_weights: vec![0.25; 4],
            background: BackgroundConfig { default: [0.5; 3], augment_probability: 0.5 },
            global_crops: CropConfig { count: 2, scale_range: (1.0, 2.0) },
            t_anneal: false,
            lambda_end: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.stages.is_empty() {
            return bad("at least one stage is required".into());
        }
        let sum: f64 = self.stages.iter().map(|s| s.fraction).sum();
        if (sum - 1.0).abs() > 1e-9 || self.stages.iter().any(|s| !(s.fraction >= 0.0)) {
            return bad(format!("stage fractions sum to {sum}, expected 1"));
        }
        for s in &self.stages {
            let (lo, hi) = s.t_range;
            if !(1 <= lo && lo <= hi && hi <= 1000) {
                return bad(format!("stage t range [{lo}, {hi}] outside [1, 1000]"));
            }
            if s.resolution == 0 || s.spp == 0 {
                return bad("stage resolution and spp must be positive".into());
            }
        }
        for (name, lr) in [("lr_texture", self.lr_texture), ("lr_light", self.lr_light), ("lr_lora", self.lr_lora)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if !(self.lr_anneal > 0.0 && self.lr_anneal.is_finite()) {
            return bad("lr_anneal must be positive".into());
        }
        if self.workers == 0 || self.loss_weights.len() != self.workers {
            return bad(format!("{} loss weights for {} workers", self.loss_weights.len(), self.workers));
        }
        let wsum: f64 = self.loss_weights.iter().sum();
        if (wsum - 1.0).abs() > 1e-9 || self.loss_weights.iter().any(|w| *w < 0.0) {
            return bad(format!("loss weights sum to {wsum}, expected 1"));
        }
        if !(0.0..=1.0).contains(&self.background.augment_probability) {
            return bad("background augment probability outside [0, 1]".into());
        }
        let (a, b) = self.global_crops.scale_range;
        if !(1.0 <= a && a <= b) {
            return bad(format!("crop scale range [{a}, {b}] must start at 1 or above"));
        }
        if !(0.0..=1.0).contains(&self.lambda_end) {
            return bad(format!("lambda_end {} outside [0, 1]", self.lambda_end));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightConfig {
    pub schedule: ScheduleConfig,
    pub fov_multiplier: f64,
    pub thresholds: Thresholds,
    pub init_scales: LightScales,
    pub cfg_scale: f64,
    pub lambda: f64,
    /// Per-pixel `⟨c, n⟩` weighting of returned gradients.
    pub grazing_weight: bool,
}

impl Default for LightConfig {
    fn default() -> Self {
        let mut schedule =
            ScheduleConfig::base(2000, vec![Stage { fraction: 1.0, resolution: 512, spp: 128, t_range: (750, 990) }]);
        schedule.lr_anneal = 0.1;
        schedule.loss_weights = APPARATUS_LOSS_WEIGHTS.to_vec();
        schedule.background.augment_probability = 0.0;
        Self {
            schedule,
            fov_multiplier: 1.65,
            thresholds: Thresholds::default(),
            init_scales: LightScales::default(),
            cfg_scale: 7.5,
            lambda: 1.0,
            grazing_weight: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub schedule: ScheduleConfig,
    pub views: usize,
    pub elevation: f64,
    pub fov_multiplier_range: (f64, f64),
    pub cfg_scale: f64,
    pub injection: Injection,
    /// Relative weights of the local and global views of one worker.
    pub local_global_weights: (f64, f64),
    /// Light the object with the estimated HDR map instead of ambient light.
    pub use_hdr: bool,
    pub negative_prompt: String,
    pub grazing_weight: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        let mut schedule =
            ScheduleConfig::base(4000, vec![Stage { fraction: 1.0, resolution: 512, spp: 128, t_range: (500, 990) }]);
        schedule.t_anneal = true;
        Self {
            schedule,
            views: 24,
            elevation: 30.0,
            fov_multiplier_range: (1.0, 1.21),
            cfg_scale: 7.5,
            injection: Injection { enabled: true, s_c: 0.0, p: 1.0 },
            local_global_weights: (0.5, 0.5),
            use_hdr: false,
            negative_prompt: String::new(),
            grazing_weight: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgSampling {
    /// Probability of lighting a step with a random spherical Gaussian.
    pub probability: f64,
    pub c_x: (f64, f64),
    pub c_y: (f64, f64),
    pub c_r: f64,
    pub c_v: (f64, f64),
    pub b_v: f64,
}

impl Default for SgSampling {
    fn default() -> Self {
        Self { probability: 0.5, c_x: (0.0, 1.0), c_y: (0.0, 0.5), c_r: 0.08, c_v: (12.0, 15.0), b_v: 0.8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub schedule: ScheduleConfig,
    pub views: usize,
    pub elevations: Vec<f64>,
    pub fov_multiplier_range: (f64, f64),
    /// Images are resized to this resolution before scoring.
    pub score_resolution: usize,
    pub cfg_scale: f64,
    pub sg: SgSampling,
    /// Environment map size used for lighting, (height, width).
    pub env_size: (usize, usize),
    pub negative_prompt: String,
    pub grazing_weight: bool,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        let schedule = ScheduleConfig::base(
            4000,
            vec![
                Stage { fraction: 0.2, resolution: 256, spp: 64, t_range: (30, 990) },
                Stage { fraction: 0.8, resolution: 512, spp: 128, t_range: (500, 990) },
            ],
        );
        Self {
            schedule,
            views: 72,
            elevations: vec![20.0, 30.0, 45.0],
            fov_multiplier_range: (0.6, 1.21),
            score_resolution: 512,
            cfg_scale: 7.5,
            sg: SgSampling::default(),
            env_size: (128, 256),
            negative_prompt: String::new(),
            grazing_weight: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSettings {
    pub weighting: TimestepWeighting,
    pub remote: Option<RemoteConfig>,
}

impl Default for GuidanceSettings {
    fn default() -> Self {
        Self { weighting: TimestepWeighting::Unit, remote: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub texture: NeuralTextureConfig,
    pub fit: FitSchedule,
    pub light: LightConfig,
    pub adapt: AdaptConfig,
    pub generate: GenerateConfig,
    pub guidance: GuidanceSettings,
    /// Resolution of rasterized UV maps for fitting and export.
    pub texture_resolution: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 0,
            texture: NeuralTextureConfig::default(),
            fit: FitSchedule::default(),
            light: LightConfig::default(),
            adapt: AdaptConfig::default(),
            generate: GenerateConfig::default(),
            guidance: GuidanceSettings::default(),
            texture_resolution: 512,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(PipelineError::Config(format!(
                "config schema version {} does not match supported version {CONFIG_SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        self.light.schedule.validate()?;
        self.adapt.schedule.validate()?;
        self.generate.schedule.validate()?;
        self.texture.bounds.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.fit.iterations == 0 || !(self.fit.lr_start > 0.0 && self.fit.lr_end > 0.0) {
            return Err(PipelineError::Config("texture fit needs iterations and positive learning rates".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String, PipelineError> {
        toml::to_string_pretty(self).map_err(|e| PipelineError::Config(e.to_string()))
    }
}
