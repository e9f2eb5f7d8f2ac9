//! Monte Carlo direct-lighting renderer.
//!
//! Each pixel sample traces one primary ray and shades the hit with two
//! strategies combined by the balance heuristic: an environment draw and a
//! cosine-weighted hemisphere draw, each followed by a shadow ray. The
//! environment sampler and all random numbers are independent of the
//! material and of the light scales, so derivatives of the estimator with a
//! fixed seed are exact derivatives of a fixed quadrature.
//!
//! Per-sample shading is accumulated separately for the background, far and
//! near light regions; a pixel is `exposure * (bg + s_far * far + s_near *
//! near) / spp`, which gives the light-scale gradients directly.

mod brdf;
mod bvh;
mod sampling;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{Camera, Ray, TriangleMesh};
use crate::image::{GrayImage, Image, RgbImage};
use crate::lighting::equirect::direction_to_bin;
use crate::lighting::{EnvironmentMap, Region};
use crate::math::{Dual, Real, Rgb, Vec3};
use crate::neural_texture::{NeuralTexture, PbrSample, SparseGradient, TextureMap, Workspace, PBR_CHANNELS};

pub use brdf::{eval_brdf, eval_brdf_generic, ggx_distribution};
pub use bvh::{Bvh, Hit};
pub use sampling::{cosine_hemisphere_pdf, sample_cosine_hemisphere, sample_envmap, EnvSampler};

const SHADOW_EPS: f64 = 1e-6;
/// Stream offset separating the floor pass from the object pass.
const FLOOR_STREAM: u64 = 1 << 40;

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("NaN in parameters")]
    NanParameters,
    #[error("gradient shape mismatch")]
    GradientShape,
    #[error("environment has zero energy")]
    ZeroEnergy,
    #[error("invalid render settings: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSettings {
    /// Square frame size in pixels.
    pub resolution: usize,
    pub spp: u32,
    pub seed: u64,
    /// Render the floor pass and let the floor occlude the object's
    /// shadow rays.
    pub include_floor: bool,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self { resolution: 512, spp: 128, seed: 0, include_floor: false }
    }
}

impl RenderSettings {
    pub fn new(resolution: usize, spp: u32, seed: u64) -> Self {
        Self { resolution, spp, seed, include_floor: false }
    }

    pub fn with_floor(self, include_floor: bool) -> Self {
        Self { include_floor, ..self }
    }
}

/// Mesh plus its acceleration structure and the height of the ground plane
/// it rests on.
#[derive(Clone, Debug)]
pub struct SceneGeometry {
    pub mesh: TriangleMesh,
    pub bvh: Bvh,
    pub floor_y: f64,
}

impl SceneGeometry {
    pub fn new(mesh: TriangleMesh) -> Self {
        let bvh = Bvh::build(&mesh);
        let floor_y = mesh.floor_height();
        Self { mesh, bvh, floor_y }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Appearance<'a> {
    /// Evaluated at the 3D hit position; differentiable.
    Neural(&'a NeuralTexture),
    /// Looked up at the interpolated UV.
    Baked(&'a TextureMap),
    Constant(PbrSample),
}

#[derive(Clone, Copy, Debug)]
pub struct Material<'a> {
    pub appearance: Appearance<'a>,
    /// Drop the specular lobe.
    pub lambert_only: bool,
}

impl<'a> Material<'a> {
    pub fn neural(tex: &'a NeuralTexture) -> Self {
        Self { appearance: Appearance::Neural(tex), lambert_only: false }
    }

    pub fn baked(map: &'a TextureMap) -> Self {
        Self { appearance: Appearance::Baked(map), lambert_only: false }
    }

    pub fn constant(sample: PbrSample) -> Self {
        Self { appearance: Appearance::Constant(sample), lambert_only: false }
    }

    pub fn diffuse(kd: Rgb) -> Self {
        Self {
            appearance: Appearance::Constant(PbrSample { kd, roughness: 1.0, metalness: 0.0 }),
            lambert_only: true,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Scene<'a> {
    pub geometry: &'a SceneGeometry,
    pub material: Material<'a>,
    pub env: &'a EnvironmentMap,
}

/// Render buffers. `radiance` is premultiplied by `alpha` (samples missing
/// the object contribute zero). `floor_radiance` is averaged over the
/// samples that hit the floor, with their fraction in `floor_alpha`.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub radiance: RgbImage,
    pub alpha: GrayImage,
    pub normal_buffer: Image<[f64; 3]>,
    pub view_dot_normal: GrayImage,
    pub floor_radiance: Option<RgbImage>,
    pub floor_alpha: Option<GrayImage>,
}

impl RenderOutput {
    pub fn resolution(&self) -> usize {
        self.radiance.width()
    }

    /// Radiance composited over a solid background color.
    pub fn over_background(&self, bg: Rgb) -> RgbImage {
        let mut out = self.radiance.clone();
        for (p, &a) in out.pixels_mut().iter_mut().zip(self.alpha.pixels()) {
            for c in 0..3 {
                p[c] += (1.0 - a) * bg[c];
            }
        }
        out
    }
}

/// Gradients of `L = sum(upstream * radiance)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderGradients {
    /// Neural texture parameters, in [`NeuralTexture::params`] order.
    pub texture: Option<Vec<f64>>,
    /// Constant material channels.
    pub material: [f64; PBR_CHANNELS],
    /// `[far, near]`.
    pub light_scales: [f64; 2],
}

pub fn render(scene: &Scene, camera: &Camera, settings: &RenderSettings) -> Result<RenderOutput, RenderError> {
    Renderer::new(scene, camera, settings, None)?.run().map(|(out, _)| out)
}

/// Renders and differentiates `sum(upstream * radiance)` with respect to
/// the material and the light scales, holding the sample sequence fixed.
/// Visibility and silhouette terms are not differentiated.
pub fn render_with_gradients(
    scene: &Scene,
    camera: &Camera,
    settings: &RenderSettings,
    upstream: &RgbImage,
) -> Result<(RenderOutput, RenderGradients), RenderError> {
    if upstream.width() != settings.resolution || upstream.height() != settings.resolution {
        return Err(RenderError::GradientShape);
    }
    if !upstream.is_finite() {
        return Err(RenderError::NanParameters);
    }
    let (out, grads) = Renderer::new(scene, camera, settings, Some(upstream))?.run()?;
    Ok((out, grads.expect("gradient mode")))
}

struct RayGen {
    origin: Vec3,
    right: Vec3,
    up: Vec3,
    forward: Vec3,
    tan: f64,
    res: f64,
}

impl RayGen {
    fn new(cam: &Camera, res: usize) -> Self {
        let (right, up, forward) = cam.basis();
        Self { origin: cam.position(), right, up, forward, tan: (0.5 * cam.fov()).tan(), res: res as f64 }
    }

    fn ray(&self, px: f64, py: f64) -> Ray {
        let sx = (2.0 * px / self.res - 1.0) * self.tan;
        let sy = (1.0 - 2.0 * py / self.res) * self.tan;
        Ray { origin: self.origin, dir: (self.forward + self.right * sx + self.up * sy).normalized() }
    }
}

#[derive(Clone, Copy, Default)]
struct PixelOut {
    radiance: Rgb,
    alpha: f64,
    normal: [f64; 3],
    vdn: f64,
    floor: Option<(Rgb, f64)>,
}

struct RowGrad {
    texture: Option<SparseGradient>,
    material: [f64; PBR_CHANNELS],
    scales: [f64; 2],
}

struct Renderer<'a> {
    scene: &'a Scene<'a>,
    settings: &'a RenderSettings,
    rays: RayGen,
    sampler: Option<EnvSampler>,
    upstream: Option<&'a RgbImage>,
    /// Background, far and near multipliers.
    scales: [f64; 3],
    exposure: f64,
}

fn region_index(r: Region) -> usize {
    match r {
        Region::Background => 0,
        Region::Far => 1,
        Region::Near => 2,
    }
}

impl<'a> Renderer<'a> {
    fn new(
        scene: &'a Scene<'a>,
        camera: &Camera,
        settings: &'a RenderSettings,
        upstream: Option<&'a RgbImage>,
    ) -> Result<Self, RenderError> {
        if settings.spp == 0 || settings.resolution == 0 {
            return Err(RenderError::Invalid("spp and resolution must be at least 1".into()));
        }
        let env = scene.env;
        let finite_material = match scene.material.appearance {
            Appearance::Neural(t) => !t.has_non_finite(),
            Appearance::Baked(m) => m.texels.iter().all(|t| t.iter().all(|v| v.is_finite())),
            Appearance::Constant(s) => s.is_finite(),
        };
        if !finite_material || !env.scales.is_valid() || !env.exposure.is_finite() {
            return Err(RenderError::NanParameters);
        }
        let sampler = match EnvSampler::new(env) {
            Ok(s) => Some(s),
            Err(RenderError::ZeroEnergy) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            scene,
            settings,
            rays: RayGen::new(camera, settings.resolution),
            sampler,
            upstream,
            scales: [1.0, env.scales.far, env.scales.near],
            exposure: env.exposure,
        })
    }

    fn run(&self) -> Result<(RenderOutput, Option<RenderGradients>), RenderError> {
        let res = self.settings.resolution;
        let rows: Vec<(Vec<PixelOut>, Option<RowGrad>)> = (0..res).into_par_iter().map(|y| self.trace_row(y)).collect();

        let mut radiance = Vec::with_capacity(res * res);
        let mut alpha = Vec::with_capacity(res * res);
        let mut normal = Vec::with_capacity(res * res);
        let mut vdn = Vec::with_capacity(res * res);
        let mut floor_rad = Vec::new();
        let mut floor_alpha = Vec::new();
        let mut grads = self.upstream.map(|_| RenderGradients {
            texture: match self.scene.material.appearance {
                Appearance::Neural(t) => Some(vec![0.0; t.parameter_count()]),
                _ => None,
            },
            material: [0.0; PBR_CHANNELS],
            light_scales: [0.0; 2],
        });
        for (pixels, row_grad) in rows {
            for p in pixels {
                radiance.push(p.radiance);
                alpha.push(p.alpha);
                normal.push(p.normal);
                vdn.push(p.vdn);
                if let Some((r, a)) = p.floor {
                    floor_rad.push(r);
                    floor_alpha.push(a);
                }
            }
            if let (Some(g), Some(rg)) = (grads.as_mut(), row_grad) {
                if let (Some(dense), Some(sparse)) = (g.texture.as_mut(), rg.texture.as_ref()) {
                    sparse.merge_into(dense);
                }
                for k in 0..PBR_CHANNELS {
                    g.material[k] += rg.material[k];
                }
                for k in 0..2 {
                    g.light_scales[k] += rg.scales[k];
                }
            }
        }
        let floor = self.settings.include_floor;
        let out = RenderOutput {
            radiance: Image::from_pixels(res, res, radiance),
            alpha: Image::from_pixels(res, res, alpha),
            normal_buffer: Image::from_pixels(res, res, normal),
            view_dot_normal: Image::from_pixels(res, res, vdn),
            floor_radiance: floor.then(|| Image::from_pixels(res, res, floor_rad)),
            floor_alpha: floor.then(|| Image::from_pixels(res, res, floor_alpha)),
        };
        Ok((out, grads))
    }

    fn trace_row(&self, y: usize) -> (Vec<PixelOut>, Option<RowGrad>) {
        let res = self.settings.resolution;
        let mut ws = Workspace::default();
        let mut grad = self.upstream.map(|_| RowGrad {
            texture: match self.scene.material.appearance {
                Appearance::Neural(t) => Some(SparseGradient::new(t)),
                _ => None,
            },
            material: [0.0; PBR_CHANNELS],
            scales: [0.0; 2],
        });
        let mut row = Vec::with_capacity(res);
        for x in 0..res {
            let mut p = self.trace_pixel(x, y, &mut ws, grad.as_mut());
            if self.settings.include_floor {
                p.floor = Some(self.trace_floor(x, y));
            }
            row.push(p);
        }
        (row, grad)
    }

    fn pixel_rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.settings.seed);
        rng.set_stream(stream);
        rng
    }

    fn trace_pixel(&self, x: usize, y: usize, ws: &mut Workspace, mut grad: Option<&mut RowGrad>) -> PixelOut {
        let res = self.settings.resolution;
        let spp = self.settings.spp;
        let mut rng = self.pixel_rng((y * res + x) as u64);
        let geo = self.scene.geometry;
        let material = self.scene.material;
        let upstream = self.upstream.map(|u| u.get(x, y));
        let norm = self.exposure / spp as f64;

        let mut acc = [[0.0; 3]; 3];
        let mut hits = 0u32;
        let mut nsum = Vec3::ZERO;
        let mut vdn_sum = 0.0;
        for _ in 0..spp {
            let ray = self.rays.ray(x as f64 + rng.gen::<f64>(), y as f64 + rng.gen::<f64>());
            let u_env = [rng.gen::<f64>(), rng.gen::<f64>()];
            let u_cos = [rng.gen::<f64>(), rng.gen::<f64>()];
            let Some(hit) = geo.bvh.intersect(&ray, f64::INFINITY) else {
                continue;
            };
            hits += 1;
            let frame = surface_frame(&geo.mesh, &hit, &ray);
            nsum += frame.ns;
            vdn_sum += frame.ns.dot(frame.wo).clamp(0.0, 1.0);

            let pbr = match material.appearance {
                Appearance::Neural(t) => t.evaluate_into(frame.p, ws).to_array(),
                Appearance::Baked(m) => m.sample(frame.uv),
                Appearance::Constant(s) => s.to_array(),
            };
            let floor_occludes = self.settings.include_floor;
            match (upstream, grad.as_deref_mut()) {
                (Some(up), Some(g)) => {
                    let duals: [Dual<PBR_CHANNELS>; PBR_CHANNELS] = std::array::from_fn(|k| Dual::variable(pbr[k], k));
                    let mut contrib = [[Dual::constant(0.0); 3]; 3];
                    self.shade(&frame, &duals, material.lambert_only, u_env, u_cos, floor_occludes, &mut contrib);
                    let mut d_out = [0.0; PBR_CHANNELS];
                    for r in 0..3 {
                        for c in 0..3 {
                            acc[r][c] += contrib[r][c].re;
                            let w = norm * self.scales[r] * up[c];
                            for k in 0..PBR_CHANNELS {
                                d_out[k] += w * contrib[r][c].eps[k];
                            }
                        }
                    }
                    match material.appearance {
                        Appearance::Neural(t) => t.backward(ws, &d_out, g.texture.as_mut().expect("neural gradient")),
                        Appearance::Constant(_) => {
                            for k in 0..PBR_CHANNELS {
                                g.material[k] += d_out[k];
                            }
                        }
                        Appearance::Baked(_) => {}
                    }
                }
                _ => {
                    let mut contrib = [[0.0; 3]; 3];
                    self.shade(&frame, &pbr, material.lambert_only, u_env, u_cos, floor_occludes, &mut contrib);
                    for r in 0..3 {
                        for c in 0..3 {
                            acc[r][c] += contrib[r][c];
                        }
                    }
                }
            }
        }

        if let (Some(up), Some(g)) = (upstream, grad) {
            for (k, r) in [1usize, 2].into_iter().enumerate() {
                g.scales[k] += norm * (0..3).map(|c| up[c] * acc[r][c]).sum::<f64>();
            }
        }
        let mut radiance = [0.0; 3];
        for c in 0..3 {
            let sum = acc[0][c] + self.scales[1] * acc[1][c] + self.scales[2] * acc[2][c];
            radiance[c] = self.exposure * sum / spp as f64;
        }
        let normal = if hits > 0 { nsum.normalized().to_array() } else { [0.0; 3] };
        let vdn = if hits > 0 { vdn_sum / hits as f64 } else { 0.0 };
        PixelOut { radiance, alpha: hits as f64 / spp as f64, normal, vdn, floor: None }
    }

    /// Floor-only pass: the object is invisible to camera rays but still
    /// casts shadows.
    fn trace_floor(&self, x: usize, y: usize) -> (Rgb, f64) {
        let res = self.settings.resolution;
        let spp = self.settings.spp;
        let mut rng = self.pixel_rng(FLOOR_STREAM + (y * res + x) as u64);
        let floor_y = self.scene.geometry.floor_y;
        let white = [1.0, 1.0, 1.0, 1.0, 0.0];
        let mut acc = [[0.0; 3]; 3];
        let mut hits = 0u32;
        for _ in 0..spp {
            let ray = self.rays.ray(x as f64 + rng.gen::<f64>(), y as f64 + rng.gen::<f64>());
            let u_env = [rng.gen::<f64>(), rng.gen::<f64>()];
            let u_cos = [rng.gen::<f64>(), rng.gen::<f64>()];
            if ray.dir.y >= 0.0 || ray.origin.y <= floor_y {
                continue;
            }
            let t = (floor_y - ray.origin.y) / ray.dir.y;
            hits += 1;
            let p = ray.at(t);
            let frame = Frame { p, ng: Vec3::Y, ns: Vec3::Y, wo: -ray.dir, uv: [0.0; 2] };
            self.shade(&frame, &white, true, u_env, u_cos, false, &mut acc);
        }
        if hits == 0 {
            return ([0.0; 3], 0.0);
        }
        let mut out = [0.0; 3];
        for c in 0..3 {
            let sum = acc[0][c] + self.scales[1] * acc[1][c] + self.scales[2] * acc[2][c];
            out[c] = self.exposure * sum / hits as f64;
        }
        (out, hits as f64 / spp as f64)
    }

    fn occluded(&self, origin: Vec3, dir: Vec3, floor_occludes: bool) -> bool {
        (floor_occludes && dir.y < 0.0) || self.scene.geometry.bvh.occluded(&Ray { origin, dir }, f64::INFINITY)
    }

    /// Two-strategy direct lighting at one surface point; adds unscaled
    /// per-region contributions into `out[region][channel]`.
    #[allow(clippy::too_many_arguments)]
    fn shade<R: Real>(
        &self,
        f: &Frame,
        pbr: &[R; PBR_CHANNELS],
        lambert_only: bool,
        u_env: [f64; 2],
        u_cos: [f64; 2],
        floor_occludes: bool,
        out: &mut [[R; 3]; 3],
    ) {
        let env = self.scene.env;
        let origin = f.p + f.ng * SHADOW_EPS;
        let mut add = |wi: Vec3, bin: usize, p_env: f64, p_cos: f64| {
            let cos = f.ns.dot(wi);
            let brdf = eval_brdf_generic(pbr, f.ns, wi, f.wo, lambert_only);
            let l = env.ldr[bin];
            let r = region_index(env.regions.region(bin));
            let w = cos / (p_env + p_cos);
            for c in 0..3 {
                out[r][c] = out[r][c] + brdf[c] * (l[c] * w);
            }
        };

        if let Some(sampler) = &self.sampler {
            let (wi, p_env, bin) = sampler.sample(u_env);
            if wi.dot(f.ng) > 0.0 && wi.dot(f.ns) > 0.0 && !self.occluded(origin, wi, floor_occludes) {
                add(wi, bin, p_env, cosine_hemisphere_pdf(f.ns, wi));
            }
        }

        let wi = sample_cosine_hemisphere(f.ns, u_cos);
        let p_cos = f.ns.dot(wi) / PI;
        if p_cos > 0.0 && wi.dot(f.ng) > 0.0 && !self.occluded(origin, wi, floor_occludes) {
            let (i, j) = direction_to_bin(wi, env.height, env.width);
            let bin = i * env.width + j;
            let p_env = self.sampler.as_ref().map_or(0.0, |s| s.bin_density(bin));
            add(wi, bin, p_env, p_cos);
        }
    }
}

struct Frame {
    p: Vec3,
    /// Geometric normal facing the viewer.
    ng: Vec3,
    /// Shading normal, on the viewer's side.
    ns: Vec3,
    wo: Vec3,
    uv: [f64; 2],
}

fn surface_frame(mesh: &TriangleMesh, hit: &Hit, ray: &Ray) -> Frame {
    let [a, b, c] = mesh.faces[hit.face].map(|i| i as usize);
    let w0 = 1.0 - hit.u - hit.v;
    let p = ray.at(hit.t);
    let wo = -ray.dir;
    let mut ng = (mesh.positions[b] - mesh.positions[a]).cross(mesh.positions[c] - mesh.positions[a]).normalized();
    if ng.dot(wo) < 0.0 {
        ng = -ng;
    }
    let mut ns = (mesh.normals[a] * w0 + mesh.normals[b] * hit.u + mesh.normals[c] * hit.v).normalized();
    if !ns.is_finite() {
        ns = ng;
    }
    if ns.dot(ng) < 0.0 {
        ns = -ns;
    }
    if ns.dot(wo) <= 0.0 {
        ns = ng;
    }
    let (ua, ub, uc) = (mesh.uvs[a], mesh.uvs[b], mesh.uvs[c]);
    let uv = [ua[0] * w0 + ub[0] * hit.u + uc[0] * hit.v, ua[1] * w0 + ub[1] * hit.u + uc[1] * hit.v];
    Frame { p, ng, ns, wo, uv }
}
