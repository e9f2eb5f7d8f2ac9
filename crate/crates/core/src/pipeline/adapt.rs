//! Texture adaptation: refine a neural texture under a fixed light so the
//! rendered object matches the scene, with local and global views.

use rand::Rng;
use rayon::prelude::*;

use super::config::AdaptConfig;
use super::{
    add_into, finish_gradient, sample_background, PipelineError, RunControl, RunKind, RunState, RunStatus,
    SceneContext, StepLog,
};
use crate::compositor::{crop_around, global_view, object_scene_bounds, pull_back_gradient};
use crate::geometry::{Camera, CameraSampling, FovForm};
use crate::guidance::{
    class_embedding, view_suffix, GradientImage, GuidanceContext, GuidanceMode, ScoreProvider, TimestepWeighting,
    ViewRequest, ViewTarget,
};
use crate::image::RgbImage;
use crate::lighting::EnvironmentMap;
use crate::math::Rgb;
use crate::neural_texture::NeuralTexture;
use crate::renderer::{render, render_with_gradients, Material, RenderSettings, Scene, SceneGeometry};

pub struct AdaptInput<'a> {
    pub geometry: &'a SceneGeometry,
    /// Starting texture; also the source of reference renders.
    pub texture: &'a NeuralTexture,
    pub env: &'a EnvironmentMap,
    pub scene: Option<SceneContext<'a>>,
    pub prompt: String,
    /// Append a front/side/back suffix per view.
    pub view_prompts: bool,
    pub fov_form: FovForm,
    pub seed: u64,
}

pub struct AdaptResult {
    pub texture: NeuralTexture,
    pub log: Vec<StepLog>,
    pub status: RunStatus,
}

struct WorkerPlan {
    view: usize,
    seed: u64,
    background: Rgb,
    crops: Vec<(f64, [f64; 2])>,
}

pub fn run_texture_adaptation(
    input: &AdaptInput<'_>,
    provider: &dyn ScoreProvider,
    cfg: &AdaptConfig,
    weighting: TimestepWeighting,
    control: &RunControl,
) -> Result<AdaptResult, PipelineError> {
    cfg.schedule.validate()?;
    let cameras = CameraSampling {
        count: cfg.views,
        elevations: vec![cfg.elevation],
        fov_multiplier_range: cfg.fov_multiplier_range,
        seed: input.seed,
        fov_form: input.fov_form,
        ..CameraSampling::default()
    }
    .sample()
    .map_err(|e| PipelineError::Config(e.to_string()))?;
    let remote = provider.is_remote();
    let total = cfg.schedule.total_iterations;
    let tex_cfg = *input.texture.config();
    let mut st = RunState::start(
        RunKind::TextureAdaptation,
        input.texture.params().to_vec(),
        input.seed,
        total,
        Some(tex_cfg),
        control,
    )?;
    let mut tex = input.texture.clone();
    let mut log = Vec::new();
    let (w_local, w_global) = cfg.local_global_weights;
    let crops = &cfg.schedule.global_crops;

    while st.iteration < total {
        if st.should_stop(control)? {
            break;
        }
        let i = st.iteration;
        let sched = cfg.schedule.at(i);
        tex.params_mut().copy_from_slice(&st.params);
        let plans: Vec<WorkerPlan> = (0..cfg.schedule.workers)
            .map(|_| {
                let view = st.rng.gen_range(0..cameras.len());
                let seed = st.rng.gen();
                let background = sample_background(&mut st.rng, &cfg.schedule.background);
                let crops = (0..crops.count)
                    .map(|_| {
                        let (a, b) = crops.scale_range;
                        let s = a + (b - a) * st.rng.gen::<f64>();
                        (s, [st.rng.gen(), st.rng.gen()])
                    })
                    .collect();
                WorkerPlan { view, seed, background, crops }
            })
            .collect();

        let current = Scene { geometry: input.geometry, material: Material::neural(&tex), env: input.env };
        let initial = Scene { geometry: input.geometry, material: Material::neural(input.texture), env: input.env };
        let step = |k: usize| -> Result<(Vec<f64>, f64), PipelineError> {
            let p = &plans[k];
            let cam: &Camera = &cameras[p.view];
            let settings = RenderSettings::new(sched.resolution, sched.spp, p.seed);
            let out = render(&current, cam, &settings)?;
            let local = out.over_background(p.background);
            let prompt = if input.view_prompts {
                format!("{}, {}", input.prompt, view_suffix(cam.azimuth))
            } else {
                input.prompt.clone()
            };
            let mut ctx = GuidanceContext {
                prompt,
                negative_prompt: cfg.negative_prompt.clone(),
                t_range: sched.t_range,
                cfg_scale: cfg.cfg_scale,
                lambda: sched.lambda,
                injection: cfg.injection,
                class_embedding: class_embedding(input.env.scales.to_array(), cam),
                solid_background: Some(p.background),
                ..GuidanceContext::default()
            };
            let reference = if remote && cfg.injection.enabled {
                Some(render(&initial, cam, &settings)?)
            } else {
                None
            };
            let weight = cfg.schedule.loss_weights[k];
            let global = remote && input.scene.is_some() && crops.count > 0;
            let vdn = cfg.grazing_weight.then_some(&out.view_dot_normal);
            let mut upstream = RgbImage::filled(sched.resolution, sched.resolution, [0.0; 3]);
            let mut energy = 0.0;

            let ref_local = reference.as_ref().map(|r| r.over_background(p.background));
            let g = provider.score(&ViewRequest {
                index: k,
                target: ViewTarget::Object,
                camera: cam,
                seed: p.seed,
                spp: sched.spp,
                resolution: sched.resolution,
                image: &local,
                ctx: &ctx,
                reference: ref_local.as_ref(),
                mask: None,
            })?;
            let lw = if global { weight * w_local } else { weight };
            let (u, e) = finish_gradient(g, remote, weighting, vdn, lw)?;
            add_into(&mut upstream, &u);
            energy += e;

            if let (true, Some(sc)) = (global, input.scene) {
                ctx.mode = GuidanceMode::GlobalInpaint;
                ctx.solid_background = None;
                let (sw, sh) = sc.image.dimensions();
                let bbox = object_scene_bounds(&out.alpha, &sc.placement)?;
                let gw = weight * w_global / p.crops.len() as f64;
                for &(scale, offset) in &p.crops {
                    let crop = crop_around(bbox, scale, offset, sw, sh);
                    let view = global_view(sc.image, &out.radiance, &out.alpha, None, &sc.placement, crop)?;
                    let ref_view = match &reference {
                        Some(r) => Some(global_view(sc.image, &r.radiance, &r.alpha, None, &sc.placement, crop)?),
                        None => None,
                    };
                    let g = provider.score(&ViewRequest {
                        index: k,
                        target: ViewTarget::Object,
                        camera: cam,
                        seed: p.seed,
                        spp: sched.spp,
                        resolution: sched.resolution,
                        image: &view.image,
                        ctx: &ctx,
                        reference: ref_view.as_ref().map(|v| &v.image),
                        mask: Some(&view.mask),
                    })?;
                    let back = GradientImage { gradient: pull_back_gradient(&view, &g.gradient)?, ..g };
                    let (u, e) = finish_gradient(back, remote, weighting, vdn, gw)?;
                    add_into(&mut upstream, &u);
                    energy += e;
                }
            }
            let (_, grads) = render_with_gradients(&current, cam, &settings, &upstream)?;
            Ok((grads.texture.unwrap_or_default(), energy))
        };
        let results = (0..cfg.schedule.workers).into_par_iter().map(step).collect::<Result<Vec<_>, _>>()?;
        provider.end_step()?;

        let mut grad = vec![0.0; st.params.len()];
        let mut loss = 0.0;
        for (g, e) in &results {
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
            loss += e;
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(st.abort_non_finite(control));
        }
        st.adam.step(&mut st.params, &grad, sched.lr_texture);
        if st.params.iter().any(|p| !p.is_finite()) {
            return Err(PipelineError::NonFinite { iteration: i });
        }
        let entry = StepLog {
            iteration: i,
            loss,
            lambda: sched.lambda,
            t_range: sched.t_range,
            lr: sched.lr_texture,
            stage: sched.stage,
            loss_weights: cfg.schedule.loss_weights.clone(),
            env_params: None,
        };
        log::info!("{entry}");
        log.push(entry);
        st.advance(control)?;
    }
    tex.params_mut().copy_from_slice(&st.params);
    Ok(AdaptResult { texture: tex, log, status: st.status() })
}
