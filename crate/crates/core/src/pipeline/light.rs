//! HDR light estimation: optimize the far and near light scales of an LDR
//! environment map from guided renders of the object and a white sphere.

use rand::Rng;
use rayon::prelude::*;

use super::config::LightConfig;
use super::{add_into, finish_gradient, PipelineError, RunControl, RunKind, RunState, RunStatus, SceneContext, StepLog};
use crate::compositor::{
    extract_shadow_matte, global_view, interpolated_crop, object_scene_bounds, pull_back_gradient, Crop,
    DEFAULT_SHADOW_THRESHOLD,
};
use crate::geometry::Camera;
use crate::guidance::{
    build_prompt, class_embedding, dark_predicate, GradientImage, GuidanceContext, LightCondition, PromptKind,
    ScoreProvider, TimestepWeighting, ViewRequest, ViewTarget,
};
use crate::image::RgbImage;
use crate::lighting::{
    apply_light_scales, build_apparatus_scene, region_mean_intensities, EnvironmentMap, LightScales,
};
use crate::renderer::{render, render_with_gradients, Appearance, Material, RenderSettings, Scene, SceneGeometry};

pub struct LightInput<'a> {
    pub geometry: &'a SceneGeometry,
    pub material: Material<'a>,
    /// LDR map carrying its light regions; its scales are ignored.
    pub ldr: &'a EnvironmentMap,
    /// Enables global views when the provider is remote.
    pub scene: Option<SceneContext<'a>>,
    pub object_prompt: String,
    pub elevation: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct LightResult {
    pub scales: LightScales,
    pub env: EnvironmentMap,
    pub log: Vec<StepLog>,
    pub status: RunStatus,
    /// Whether the estimated map counts as a dark environment.
    pub dark: bool,
    /// Object prompt with the lighting suffix applied.
    pub prompt: String,
}

struct ViewPlan {
    target: ViewTarget,
    camera: Camera,
    seed: u64,
    crop_t: f64,
}

pub fn run_light_estimation(
    input: &LightInput<'_>,
    provider: &dyn ScoreProvider,
    cfg: &LightConfig,
    weighting: TimestepWeighting,
    control: &RunControl,
) -> Result<LightResult, PipelineError> {
    cfg.schedule.validate()?;
    if cfg.schedule.workers < 2 {
        return Err(PipelineError::Config("light estimation needs object views and a sphere view".into()));
    }
    if !cfg.init_scales.is_valid() {
        return Err(PipelineError::Config("initial light scales must be finite and non-negative".into()));
    }
    let remote = provider.is_remote();
    let apparatus = build_apparatus_scene(&input.geometry.mesh);
    let sphere = SceneGeometry::new(apparatus.sphere.clone());
    let sphere_material = Material { appearance: Appearance::Constant(apparatus.material), lambert_only: true };
    let total = cfg.schedule.total_iterations;
    let mut st = RunState::start(RunKind::LightEstimation, cfg.init_scales.to_array().to_vec(), input.seed, total, None, control)?;
    let mut log = Vec::new();

    while st.iteration < total {
        if st.should_stop(control)? {
            break;
        }
        let i = st.iteration;
        let sched = cfg.schedule.at(i);
        let scales = LightScales::from_array([st.params[0], st.params[1]]);
        let env = apply_light_scales(input.ldr, &input.ldr.regions, scales)?;
        let n = cfg.schedule.workers;
        let plans: Vec<ViewPlan> = (0..n)
            .map(|k| {
                let az: f64 = st.rng.gen_range(0.0..360.0);
                let seed: u64 = st.rng.gen();
                let crop_t: f64 = st.rng.gen();
                let target = if k + 1 == n { ViewTarget::Apparatus } else { ViewTarget::Object };
                ViewPlan { target, camera: Camera::orbit(az, input.elevation, cfg.fov_multiplier), seed, crop_t }
            })
            .collect();

        let step = |k: usize| -> Result<([f64; 2], f64), PipelineError> {
            let p = &plans[k];
            let (geometry, material, prompt) = match p.target {
                ViewTarget::Object => (input.geometry, input.material, input.object_prompt.as_str()),
                ViewTarget::Apparatus => (&sphere, sphere_material, apparatus.prompt),
            };
            let scene = Scene { geometry, material, env: &env };
            let global = remote && p.target == ViewTarget::Object && input.scene.is_some();
            let settings = RenderSettings::new(sched.resolution, sched.spp, p.seed).with_floor(global);
            let out = render(&scene, &p.camera, &settings)?;
            let ctx = GuidanceContext {
                prompt: prompt.to_string(),
                t_range: sched.t_range,
                cfg_scale: cfg.cfg_scale,
                lambda: cfg.lambda,
                class_embedding: class_embedding(scales.to_array(), &p.camera),
                solid_background: None,
                ..GuidanceContext::default()
            };
            let vdn = cfg.grazing_weight.then_some(&out.view_dot_normal);
            let w = cfg.schedule.loss_weights[k];
            let score = |image: &RgbImage| {
                provider.score(&ViewRequest {
                    index: k,
                    target: p.target,
                    camera: &p.camera,
                    seed: p.seed,
                    spp: sched.spp,
                    resolution: sched.resolution,
                    image,
                    ctx: &ctx,
                    reference: None,
                    mask: None,
                })
            };
            let mut upstream = RgbImage::filled(sched.resolution, sched.resolution, [0.0; 3]);
            let mut energy = 0.0;
            let local_w = if global { 0.5 } else { 1.0 };
            let g = score(&out.radiance)?;
            let (u, e) = finish_gradient(g, remote, weighting, vdn, w * local_w)?;
            add_into(&mut upstream, &u);
            energy += e;
            if let (true, Some(sc)) = (global, input.scene) {
                let matte = match (&out.floor_radiance, &out.floor_alpha) {
                    (Some(f), a) => Some(extract_shadow_matte(f, a.as_ref(), DEFAULT_SHADOW_THRESHOLD)?),
                    _ => None,
                };
                let (sw, sh) = sc.image.dimensions();
                let bbox = object_scene_bounds(&out.alpha, &sc.placement)?;
                for crop in [Crop::full(sw, sh), interpolated_crop(bbox, p.crop_t, sw, sh)] {
                    let view = global_view(sc.image, &out.radiance, &out.alpha, matte.as_ref(), &sc.placement, crop)?;
                    let g = score(&view.image)?;
                    let back = GradientImage { gradient: pull_back_gradient(&view, &g.gradient)?, ..g };
                    let (u, e) = finish_gradient(back, remote, weighting, vdn, w * 0.25)?;
                    add_into(&mut upstream, &u);
                    energy += e;
                }
            }
            let (_, grads) = render_with_gradients(&scene, &p.camera, &settings, &upstream)?;
            Ok((grads.light_scales, energy))
        };
        let results = (0..n).into_par_iter().map(step).collect::<Result<Vec<_>, _>>()?;
        provider.end_step()?;

        let mut grad = [0.0; 2];
        let mut loss = 0.0;
        for (g, e) in &results {
            grad[0] += g[0];
            grad[1] += g[1];
            loss += e;
        }
        if !loss.is_finite() || !grad.iter().all(|g| g.is_finite()) {
            return Err(st.abort_non_finite(control));
        }
        st.adam.step(&mut st.params, &grad, sched.lr_light);
        for p in st.params.iter_mut() {
            *p = p.max(0.0);
        }
        let entry = StepLog {
            iteration: i,
            loss,
            lambda: cfg.lambda,
            t_range: sched.t_range,
            lr: sched.lr_light,
            stage: sched.stage,
            loss_weights: cfg.schedule.loss_weights.clone(),
            env_params: None,
        };
        log::info!("{entry}");
        log.push(entry);
        st.advance(control)?;
    }

    let scales = LightScales::from_array([st.params[0], st.params[1]]);
    let env = apply_light_scales(input.ldr, &input.ldr.regions, scales)?;
    let (bg, light) = region_mean_intensities(&env);
    let dark = dark_predicate(bg, light);
    let prompt = build_prompt(
        PromptKind::Object,
        &input.object_prompt,
        None,
        None,
        &LightCondition { dark, color: None },
    )?;
    Ok(LightResult { scales, env, log, status: st.status(), dark, prompt })
}
