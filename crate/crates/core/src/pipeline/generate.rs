//! Scene-agnostic texture generation under randomized spherical-Gaussian
//! lighting, with view-dependent prompts and a two-stage resolution
//! schedule.

use rand::Rng;
use rayon::prelude::*;

use super::config::GenerateConfig;
use super::{
    add_into, finish_gradient, sample_background, upsample, upsample_adjoint, PipelineError, RunControl, RunKind,
    RunState, RunStatus, StepLog,
};
use crate::geometry::{Camera, CameraSampling, FovForm};
use crate::guidance::{
    build_prompt, GuidanceContext, LightCondition, PromptKind, ScoreProvider, TimestepWeighting, ViewRequest,
    ViewTarget,
};
use crate::image::RgbImage;
use crate::lighting::{synthesize_sg_envmap, SgParams, AMBIENT_SG};
use crate::neural_texture::NeuralTexture;
use crate::renderer::{render, render_with_gradients, Material, RenderSettings, Scene, SceneGeometry};

use super::config::SgSampling;

pub struct GenerateInput<'a> {
    pub geometry: &'a SceneGeometry,
    pub texture: &'a NeuralTexture,
    pub object_prompt: String,
    pub fov_form: FovForm,
    pub seed: u64,
}

pub struct GenerateResult {
    pub texture: NeuralTexture,
    pub log: Vec<StepLog>,
    pub status: RunStatus,
}

/// Draws lighting for one step: a random spherical Gaussian with
/// probability `p`, otherwise uniform ambient light. Always consumes the
/// same number of draws.
pub(crate) fn sample_sg(rng: &mut impl Rng, cfg: &SgSampling) -> SgParams {
    let u: f64 = rng.gen();
    let c_x = cfg.c_x.0 + (cfg.c_x.1 - cfg.c_x.0) * rng.gen::<f64>();
    let c_y = cfg.c_y.0 + (cfg.c_y.1 - cfg.c_y.0) * rng.gen::<f64>();
    let c_v = cfg.c_v.0 + (cfg.c_v.1 - cfg.c_v.0) * rng.gen::<f64>();
    if u < cfg.probability {
        SgParams { c_x, c_y, c_r: cfg.c_r, c_v, b_v: cfg.b_v }
    } else {
        AMBIENT_SG
    }
}

struct WorkerPlan {
    view: usize,
    seed: u64,
    background: [f64; 3],
}

pub fn run_scene_agnostic_generation(
    input: &GenerateInput<'_>,
    provider: &dyn ScoreProvider,
    cfg: &GenerateConfig,
    weighting: TimestepWeighting,
    control: &RunControl,
) -> Result<GenerateResult, PipelineError> {
    cfg.schedule.validate()?;
    if input.object_prompt.trim().is_empty() {
        return Err(PipelineError::Config("object prompt must be nonempty".into()));
    }
    let cameras = CameraSampling {
        count: cfg.views,
        elevations: cfg.elevations.clone(),
        fov_multiplier_range: cfg.fov_multiplier_range,
        seed: input.seed,
        fov_form: input.fov_form,
        ..CameraSampling::default()
    }
    .sample()
    .map_err(|e| PipelineError::Config(e.to_string()))?;
    for s in &cfg.schedule.stages {
        if cfg.score_resolution % s.resolution != 0 {
            return Err(PipelineError::Config(format!(
                "score resolution {} is not a multiple of stage resolution {}",
                cfg.score_resolution, s.resolution
            )));
        }
    }
    let remote = provider.is_remote();
    let total = cfg.schedule.total_iterations;
    let mut st = RunState::start(
        RunKind::SceneAgnosticGeneration,
        input.texture.params().to_vec(),
        input.seed,
        total,
        Some(*input.texture.config()),
        control,
    )?;
    let mut tex = input.texture.clone();
    let mut log = Vec::new();
    let (eh, ew) = cfg.env_size;

    while st.iteration < total {
        if st.should_stop(control)? {
            break;
        }
        let i = st.iteration;
        let sched = cfg.schedule.at(i);
        tex.params_mut().copy_from_slice(&st.params);
        let sg = sample_sg(&mut st.rng, &cfg.sg);
        let env = synthesize_sg_envmap(sg, eh, ew);
        let plans: Vec<WorkerPlan> = (0..cfg.schedule.workers)
            .map(|_| WorkerPlan {
                view: st.rng.gen_range(0..cameras.len()),
                seed: st.rng.gen(),
                background: sample_background(&mut st.rng, &cfg.schedule.background),
            })
            .collect();
        let factor = cfg.score_resolution / sched.resolution;
        let scene = Scene { geometry: input.geometry, material: Material::neural(&tex), env: &env };

        let step = |k: usize| -> Result<(Vec<f64>, f64), PipelineError> {
            let p = &plans[k];
            let cam: &Camera = &cameras[p.view];
            let settings = RenderSettings::new(sched.resolution, sched.spp, p.seed);
            let out = render(&scene, cam, &settings)?;
            let image = upsample(&out.over_background(p.background), factor);
            let prompt = build_prompt(
                PromptKind::Object,
                &input.object_prompt,
                None,
                Some(cam.azimuth),
                &LightCondition::default(),
            )?;
            let ctx = GuidanceContext {
                prompt,
                negative_prompt: cfg.negative_prompt.clone(),
                t_range: sched.t_range,
                cfg_scale: cfg.cfg_scale,
                lambda: sched.lambda,
                class_embedding: sg.to_array().to_vec(),
                solid_background: Some(p.background),
                ..GuidanceContext::default()
            };
            let g = provider.score(&ViewRequest {
                index: k,
                target: ViewTarget::Object,
                camera: cam,
                seed: p.seed,
                spp: sched.spp,
                resolution: sched.resolution,
                image: &image,
                ctx: &ctx,
                reference: None,
                mask: None,
            })?;
            let g = crate::guidance::GradientImage { gradient: upsample_adjoint(&g.gradient, factor), ..g };
            let vdn = cfg.grazing_weight.then_some(&out.view_dot_normal);
            let (u, e) = finish_gradient(g, remote, weighting, vdn, cfg.schedule.loss_weights[k])?;
            let mut upstream = RgbImage::filled(sched.resolution, sched.resolution, [0.0; 3]);
            add_into(&mut upstream, &u);
            let (_, grads) = render_with_gradients(&scene, cam, &settings, &upstream)?;
            Ok((grads.texture.unwrap_or_default(), e))
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
            env_params: Some(sg.to_array()),
        };
        log::info!("{entry}");
        log.push(entry);
        st.advance(control)?;
    }
    tex.params_mut().copy_from_slice(&st.params);
    Ok(GenerateResult { texture: tex, log, status: st.status() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_probability_always_ambient() {
        let cfg = SgSampling { probability: 0.0, ..SgSampling::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!((0..200).all(|_| sample_sg(&mut rng, &cfg) == AMBIENT_SG));
    }

    #[test]
    fn sampled_parameters_stay_in_range() {
        let cfg = SgSampling { probability: 1.0, ..SgSampling::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let p = sample_sg(&mut rng, &cfg);
            assert!((0.0..=1.0).contains(&p.c_x) && (0.0..=0.5).contains(&p.c_y));
            assert!((12.0..=15.0).contains(&p.c_v));
            assert_eq!((p.c_r, p.b_v), (0.08, 0.8));
        }
    }
}
