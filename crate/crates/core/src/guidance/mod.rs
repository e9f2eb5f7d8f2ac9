//! Score assembly, grazing-angle weighting, the photometric oracle, prompt
//! construction and the remote score-service client.

mod client;
mod prompt;

pub use client::{RemoteClient, RemoteConfig, ScoreRequest, ScoreResponse, PROTOCOL_HEADER, PROTOCOL_VERSION};
pub use prompt::{build_prompt, dark_predicate, view_suffix, LightCondition, PromptKind, DARK_SUFFIX, LIGHT_DARK_THRESHOLDS};

use serde::{Deserialize, Serialize};

use crate::geometry::Camera;
use crate::image::{GrayImage, RgbImage};
use crate::math::Rgb;

#[derive(Debug, thiserror::Error)]
pub enum GuidanceError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid guidance context: {0}")]
    InvalidContext(String),
    #[error("object text must be nonempty")]
    EmptyObject,
    #[error("guidance service unavailable after {attempts} attempts: {last}")]
    Unavailable { attempts: u32, last: String },
    #[error("protocol version mismatch: expected {expected}, service speaks {found}")]
    ProtocolVersion { expected: String, found: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("payload: {0}")]
    Payload(#[from] crate::io::IoError),
}

/// `ε_φ − (λ·ε_ψ + (1−λ)·ε)`.
pub fn interpolate_scores(eps_phi: &[f64], eps_psi: &[f64], eps: &[f64], lambda: f64) -> Result<Vec<f64>, GuidanceError> {
    if eps_phi.len() != eps_psi.len() || eps_phi.len() != eps.len() {
        return Err(GuidanceError::Shape(format!(
            "score vectors of length {}, {}, {}",
            eps_phi.len(),
            eps_psi.len(),
            eps.len()
        )));
    }
    Ok(eps_phi
        .iter()
        .zip(eps_psi)
        .zip(eps)
        .map(|((&p, &q), &e)| p - (lambda * q + (1.0 - lambda) * e))
        .collect())
}

/// Evaluates the interpolated residual twice: directly in noise space and
/// through the clean-image estimates `x̂ = (x_t − √(1−α)·ε̂)/√α`.
pub fn eq2_equivalence(
    x0: &[f64],
    eps: &[f64],
    eps_phi: &[f64],
    eps_psi: &[f64],
    alpha_t: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), GuidanceError> {
    if !(alpha_t > 0.0 && alpha_t < 1.0) {
        return Err(GuidanceError::InvalidContext(format!("alpha_t {alpha_t} outside (0, 1)")));
    }
    if x0.len() != eps.len() {
        return Err(GuidanceError::Shape(format!("x0 has {} entries, eps {}", x0.len(), eps.len())));
    }
    let lhs = interpolate_scores(eps_phi, eps_psi, eps, lambda)?;
    let sa = alpha_t.sqrt();
    let sb = (1.0 - alpha_t).sqrt();
    let k = (alpha_t / (1.0 - alpha_t)).sqrt();
    let rhs = (0..x0.len())
        .map(|i| {
            let xt = sa * x0[i] + sb * eps[i];
            let x_phi = (xt - sb * eps_phi[i]) / sa;
            let x_psi = (xt - sb * eps_psi[i]) / sa;
            k * ((x0[i] - x_phi) - lambda * (x0[i] - x_psi))
        })
        .collect();
    Ok((lhs, rhs))
}

/// Gradient of a guidance loss with respect to the rendered linear RGB
/// image, plus the diffusion metadata it was computed with.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientImage {
    pub gradient: RgbImage,
    pub t: f64,
    pub alpha_t: f64,
    pub w_t: f64,
}

impl GradientImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { gradient: RgbImage::filled(width, height, [0.0; 3]), t: 0.0, alpha_t: 1.0, w_t: 1.0 }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { gradient: self.gradient.scaled(s), ..self.clone() }
    }

    pub fn is_finite(&self) -> bool {
        self.gradient.is_finite() && self.t.is_finite() && self.alpha_t.is_finite() && self.w_t.is_finite()
    }
}

/// Per-pixel `⟨c, n⟩` clamped to `[0, 1]`.
pub fn grazing_weight(view_dot_normal: &GrayImage) -> GrayImage {
    view_dot_normal.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
}

pub fn apply_grazing_weight(grad: &mut GradientImage, view_dot_normal: &GrayImage) -> Result<(), GuidanceError> {
    if !grad.gradient.same_shape(view_dot_normal) {
        return Err(GuidanceError::Shape("gradient and view·normal buffers differ in size".into()));
    }
    let w = grazing_weight(view_dot_normal);
    for (g, &k) in grad.gradient.pixels_mut().iter_mut().zip(w.pixels()) {
        for c in g.iter_mut() {
            *c *= k;
        }
    }
    Ok(())
}

/// Inverse-rendering gradient `render − target`, the derivative of
/// `½‖render − target‖²`.
pub fn photometric_oracle(render: &RgbImage, target: &RgbImage) -> Result<GradientImage, GuidanceError> {
    if !render.same_shape(target) {
        return Err(GuidanceError::Shape(format!(
            "render {:?} vs target {:?}",
            render.dimensions(),
            target.dimensions()
        )));
    }
    let pixels = render
        .pixels()
        .iter()
        .zip(target.pixels())
        .map(|(r, t)| [r[0] - t[0], r[1] - t[1], r[2] - t[2]])
        .collect();
    let (w, h) = render.dimensions();
    Ok(GradientImage { gradient: RgbImage::from_pixels(w, h, pixels), t: 0.0, alpha_t: 1.0, w_t: 1.0 })
}

/// `½‖render − target‖²`.
pub fn photometric_loss(render: &RgbImage, target: &RgbImage) -> f64 {
    0.5 * render
        .pixels()
        .iter()
        .zip(target.pixels())
        .map(|(r, t)| (0..3).map(|c| (r[c] - t[c]) * (r[c] - t[c])).sum::<f64>())
        .sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GuidanceMode {
    #[serde(rename = "local")]
    Local,
    #[serde(rename = "global-inpaint")]
    GlobalInpaint,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub enabled: bool,
    pub s_c: f64,
    pub p: f64,
}

impl Default for Injection {
    fn default() -> Self {
        Self { enabled: true, s_c: 0.0, p: 1.0 }
    }
}

/// How the scalar diffusion weight combines with the returned gradient.
/// The service reports its own `w_t`; `OneMinusAlpha` rescales remote
/// gradients by `1 − α_t` on top of it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimestepWeighting {
    #[default]
    Unit,
    OneMinusAlpha,
}

impl TimestepWeighting {
    pub fn factor(self, alpha_t: f64) -> f64 {
        match self {
            TimestepWeighting::Unit => 1.0,
            TimestepWeighting::OneMinusAlpha => 1.0 - alpha_t,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceContext {
    pub prompt: String,
    pub negative_prompt: String,
    pub t_range: (u32, u32),
    pub cfg_scale: f64,
    pub lambda: f64,
    pub injection: Injection,
    /// Light scales followed by the flattened camera extrinsic.
    pub class_embedding: Vec<f64>,
    pub mode: GuidanceMode,
    pub solid_background: Option<Rgb>,
}

impl Default for GuidanceContext {
    fn default() -> Self {
        Self {
            prompt: String::new(),
            negative_prompt: String::new(),
            t_range: (500, 990),
            cfg_scale: 7.5,
            lambda: 1.0,
            injection: Injection::default(),
            class_embedding: Vec::new(),
            mode: GuidanceMode::Local,
            solid_background: Some([0.5; 3]),
        }
    }
}

impl GuidanceContext {
    pub fn validate(&self) -> Result<(), GuidanceError> {
        let (lo, hi) = self.t_range;
        if !(1 <= lo && lo <= hi && hi <= 1000) {
            return Err(GuidanceError::InvalidContext(format!("t range [{lo}, {hi}] outside [1, 1000]")));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(GuidanceError::InvalidContext(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        let inj = &self.injection;
        if !(0.0..=1.0).contains(&inj.s_c) || !(0.0..=1.0).contains(&inj.p) {
            return Err(GuidanceError::InvalidContext(format!("injection s_c={} p={} outside [0, 1]", inj.s_c, inj.p)));
        }
        if !self.cfg_scale.is_finite() || self.class_embedding.iter().any(|v| !v.is_finite()) {
            return Err(GuidanceError::InvalidContext("non-finite cfg scale or class embedding".into()));
        }
        Ok(())
    }
}

/// `[s_far, s_near] ++ extrinsic`.
pub fn class_embedding(light_scales: [f64; 2], camera: &Camera) -> Vec<f64> {
    light_scales.iter().copied().chain(camera.extrinsic()).collect()
}

/// Which scene a scored view shows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViewTarget {
    Object,
    Apparatus,
}

/// One rendered view submitted for scoring.
pub struct ViewRequest<'a> {
    pub index: usize,
    pub target: ViewTarget,
    pub camera: &'a Camera,
    /// Seed the render was produced with; oracles reproduce it.
    pub seed: u64,
    pub spp: u32,
    /// Render resolution; `image` may be larger after resizing.
    pub resolution: usize,
    pub image: &'a RgbImage,
    pub ctx: &'a GuidanceContext,
    pub reference: Option<&'a RgbImage>,
    pub mask: Option<&'a GrayImage>,
}

/// Anything that turns a rendered view into an image-space gradient.
pub trait ScoreProvider: Sync {
    fn score(&self, req: &ViewRequest<'_>) -> Result<GradientImage, GuidanceError>;

    /// Called once per optimizer step after all views were scored.
    fn end_step(&self) -> Result<(), GuidanceError> {
        Ok(())
    }

    /// Remote providers get global views, reference renders and the
    /// timestep weighting; oracles score the render directly.
    fn is_remote(&self) -> bool {
        false
    }
}

/// Photometric oracle against targets produced on demand for each view.
pub struct PhotometricProvider<F> {
    target: F,
}

impl<F> PhotometricProvider<F>
where
    F: Fn(&ViewRequest<'_>) -> Result<RgbImage, GuidanceError> + Sync,
{
    pub fn new(target: F) -> Self {
        Self { target }
    }
}

impl<F> ScoreProvider for PhotometricProvider<F>
where
    F: Fn(&ViewRequest<'_>) -> Result<RgbImage, GuidanceError> + Sync,
{
    fn score(&self, req: &ViewRequest<'_>) -> Result<GradientImage, GuidanceError> {
        let target = (self.target)(req)?;
        photometric_oracle(req.image, &target)
    }
}

/// Always returns a zero gradient; used to check that optimizers hold
/// still without a signal.
pub struct ZeroProvider;

impl ScoreProvider for ZeroProvider {
    fn score(&self, req: &ViewRequest<'_>) -> Result<GradientImage, GuidanceError> {
        let (w, h) = req.image.dimensions();
        Ok(GradientImage::zeros(w, h))
    }
}
