use sf_core::geometry::primitives::uv_cube;
use sf_core::geometry::{normalize_mesh, FovForm};
use sf_core::guidance::{GuidanceError, PhotometricProvider, TimestepWeighting, ViewRequest, ZeroProvider};
use sf_core::lighting::{outdoor_regions, synthesize_sg_envmap, EnvironmentMap, LightScales, AMBIENT_SG};
use sf_core::neural_texture::{HashEncodingConfig, NeuralTexture, NeuralTextureConfig, PbrSample};
use sf_core::pipeline::{
    run_light_estimation, run_scene_agnostic_generation, run_texture_adaptation, AdaptConfig, AdaptInput, Checkpoint,
    GenerateConfig, GenerateInput, LightConfig, LightInput, PipelineError, RunControl, RunStatus, Stage,
};
use sf_core::renderer::{render, Material, RenderSettings, Scene, SceneGeometry};

fn cube() -> SceneGeometry {
    SceneGeometry::new(normalize_mesh(&uv_cube()).unwrap())
}

fn tiny_texture(seed: u64) -> NeuralTexture {
    let cfg = NeuralTextureConfig {
        encoding: HashEncodingConfig { levels: 4, base_resolution: 4, growth: 1.5, log2_table_size: 8, features: 2 },
        hidden_width: 8,
        ..NeuralTextureConfig::default()
    };
    NeuralTexture::new(cfg, seed).unwrap()
}

fn sky() -> EnvironmentMap {
    let (w, h) = (32, 16);
    let ldr = (0..w * h)
        .map(|b| {
            let (i, j) = (b / w, b % w);
            if i < 4 && (8..12).contains(&j) {
                [1.0; 3]
            } else {
                [0.3, 0.3, 0.35]
            }
        })
        .collect();
    let mut env = EnvironmentMap::from_ldr(w, h, ldr).unwrap();
    env.regions = outdoor_regions(&env, 0.9);
    env
}

fn small_light_config(iters: usize) -> LightConfig {
    let mut cfg = LightConfig::default();
    cfg.schedule.total_iterations = iters;
    cfg.schedule.stages = vec![Stage { fraction: 1.0, resolution: 12, spp: 2, t_range: (750, 990) }];
    cfg
}

fn small_adapt_config(iters: usize) -> AdaptConfig {
    let mut cfg = AdaptConfig::default();
    cfg.schedule.total_iterations = iters;
    cfg.schedule.stages = vec![Stage { fraction: 1.0, resolution: 12, spp: 1, t_range: (500, 990) }];
    cfg.schedule.workers = 2;
    cfg.schedule.loss_weights = vec![0.5, 0.5];
    cfg.schedule.lr_texture = 0.01;
    cfg.schedule.lambda_end = 0.5;
    cfg.views = 6;
    cfg
}

#[test]
fn zero_gradients_leave_the_light_unchanged() {
    let geo = cube();
    let ldr = sky();
    let input = LightInput {
        geometry: &geo,
        material: Material::constant(PbrSample { kd: [0.6; 3], roughness: 0.8, metalness: 0.0 }),
        ldr: &ldr,
        scene: None,
        object_prompt: "a wooden crate".into(),
        elevation: 30.0,
        seed: 3,
    };
    let res = run_light_estimation(&input, &ZeroProvider, &small_light_config(3), TimestepWeighting::Unit, &RunControl::default())
        .unwrap();
    assert_eq!(res.scales, LightScales::default());
    assert_eq!(res.status, RunStatus::Completed);
    assert_eq!(res.log.len(), 3);
    for entry in &res.log {
        assert!((entry.loss_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(entry.loss, 0.0);
    }
    assert!(!res.dark);
    assert_eq!(res.prompt, "a wooden crate");
}

#[test]
fn photometric_light_steps_toward_the_target() {
    let geo = cube();
    let ldr = sky();
    let mat = Material::constant(PbrSample { kd: [0.6; 3], roughness: 0.8, metalness: 0.0 });
    let target_env = sf_core::lighting::apply_light_scales(&ldr, &ldr.regions, LightScales { far: 3.0, near: 1.0 }).unwrap();
    let sphere = SceneGeometry::new(sf_core::lighting::build_apparatus_scene(&geo.mesh).sphere);
    let oracle = PhotometricProvider::new(|req: &ViewRequest| -> Result<_, GuidanceError> {
        let (g, m) = match req.target {
            sf_core::guidance::ViewTarget::Object => (&geo, mat),
            sf_core::guidance::ViewTarget::Apparatus => (&sphere, Material::diffuse([1.0; 3])),
        };
        let scene = Scene { geometry: g, material: m, env: &target_env };
        let out = render(&scene, req.camera, &RenderSettings::new(req.resolution, req.spp, req.seed)).unwrap();
        Ok(out.radiance)
    });
    let input = LightInput {
        geometry: &geo,
        material: mat,
        ldr: &ldr,
        scene: None,
        object_prompt: "a crate".into(),
        elevation: 30.0,
        seed: 5,
    };
    let mut cfg = small_light_config(20);
    cfg.schedule.lr_light = 0.1;
    let res = run_light_estimation(&input, &oracle, &cfg, TimestepWeighting::Unit, &RunControl::default()).unwrap();
    assert!(res.scales.far > 2.0, "{:?}", res.scales);
    assert!(res.log.last().unwrap().loss < res.log[0].loss);
}

fn adapt_run(control: &RunControl, iters: usize) -> Result<(Vec<f64>, Vec<f64>), PipelineError> {
    let geo = cube();
    let env = synthesize_sg_envmap(AMBIENT_SG, 8, 16);
    let mut target = tiny_texture(99);
    for (i, p) in target.params_mut().iter_mut().enumerate() {
        *p = (i as f64 * 0.7).sin() * 0.5;
    }
    let init = tiny_texture(1);
    let oracle = PhotometricProvider::new(|req: &ViewRequest| -> Result<_, GuidanceError> {
        let scene = Scene { geometry: &geo, material: Material::neural(&target), env: &env };
        let out = render(&scene, req.camera, &RenderSettings::new(req.resolution, req.spp, req.seed)).unwrap();
        Ok(out.over_background(req.ctx.solid_background.unwrap()))
    });
    let input = AdaptInput {
        geometry: &geo,
        texture: &init,
        env: &env,
        scene: None,
        prompt: "a crate".into(),
        view_prompts: true,
        fov_form: FovForm::HalfAngle,
        seed: 7,
    };
    let res = run_texture_adaptation(&input, &oracle, &small_adapt_config(iters), TimestepWeighting::Unit, control)?;
    Ok((res.texture.params().to_vec(), res.log.iter().map(|l| l.loss).collect()))
}

#[test]
fn adaptation_is_deterministic_and_logs_schedules() {
    let (a, la) = adapt_run(&RunControl::default(), 4).unwrap();
    let (b, lb) = adapt_run(&RunControl::default(), 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    assert_ne!(a, tiny_texture(1).params());
    assert!(la.iter().all(|l| *l > 0.0));
}

#[test]
fn interrupted_adaptation_resumes_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let full_path = dir.path().join("full.ckpt");
    let part_path = dir.path().join("part.ckpt");
    let full = RunControl { checkpoint_path: Some(full_path.clone()), ..RunControl::default() };
    adapt_run(&full, 4).unwrap();

    let first = RunControl { checkpoint_path: Some(part_path.clone()), stop_after: Some(2), ..RunControl::default() };
    adapt_run(&first, 4).unwrap();
    let mid = Checkpoint::load(&part_path).unwrap();
    assert_eq!(mid.iteration, 2);
    let second = RunControl { checkpoint_path: Some(part_path.clone()), resume: Some(mid), ..RunControl::default() };
    adapt_run(&second, 4).unwrap();

    assert_eq!(std::fs::read(&full_path).unwrap(), std::fs::read(&part_path).unwrap());
}

#[test]
fn corrupt_or_foreign_checkpoints_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ckpt");
    let control = RunControl { checkpoint_path: Some(path.clone()), ..RunControl::default() };
    adapt_run(&control, 1).unwrap();

    let mut bytes = std::fs::read(&path).unwrap();
    let n = bytes.len() / 2;
    bytes[n] ^= 0xff;
    std::fs::write(&path, &bytes).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap_err().to_string(), "checkpoint corrupt");

    let mut ck = Checkpoint::from_bytes(&{
        bytes[n] ^= 0xff;
        bytes
    })
    .unwrap();
    ck.kind = sf_core::pipeline::RunKind::LightEstimation;
    let resume = RunControl { resume: Some(ck), ..RunControl::default() };
    assert!(matches!(adapt_run(&resume, 1), Err(PipelineError::CheckpointMismatch(_))));
}

#[test]
fn adaptation_lambda_and_noise_schedules_reach_their_endpoints() {
    let geo = cube();
    let env = synthesize_sg_envmap(AMBIENT_SG, 8, 16);
    let init = tiny_texture(1);
    let input = AdaptInput {
        geometry: &geo,
        texture: &init,
        env: &env,
        scene: None,
        prompt: "a crate".into(),
        view_prompts: false,
        fov_form: FovForm::HalfAngle,
        seed: 0,
    };
    let res =
        run_texture_adaptation(&input, &ZeroProvider, &small_adapt_config(5), TimestepWeighting::Unit, &RunControl::default())
            .unwrap();
    assert_eq!(res.log[0].lambda, 1.0);
    assert_eq!(res.log[4].lambda, 0.5);
    assert_eq!(res.log[0].t_range, (500, 990));
    assert_eq!(res.log[4].t_range, (500, 745));
    assert_eq!(res.texture.params(), init.params());
}

#[test]
fn generation_switches_stage_and_lights_with_ambient_when_sg_is_off() {
    let geo = cube();
    let init = tiny_texture(4);
    let mut cfg = GenerateConfig::default();
    cfg.schedule.total_iterations = 5;
    cfg.schedule.stages = vec![
        Stage { fraction: 0.4, resolution: 8, spp: 1, t_range: (30, 990) },
        Stage { fraction: 0.6, resolution: 16, spp: 1, t_range: (500, 990) },
    ];
    cfg.schedule.workers = 1;
    cfg.schedule.loss_weights = vec![1.0];
    cfg.score_resolution = 32;
    cfg.env_size = (8, 16);
    cfg.views = 8;
    cfg.sg.probability = 0.0;
    let input = GenerateInput {
        geometry: &geo,
        texture: &init,
        object_prompt: "a teapot".into(),
        fov_form: FovForm::HalfAngle,
        seed: 2,
    };
    let seen = std::sync::Mutex::new(Vec::new());
    let probe = PhotometricProvider::new(|req: &ViewRequest| -> Result<_, GuidanceError> {
        seen.lock().unwrap().push((req.image.width(), req.ctx.prompt.clone()));
        Ok(req.image.clone())
    });
    let res = run_scene_agnostic_generation(&input, &probe, &cfg, TimestepWeighting::Unit, &RunControl::default()).unwrap();
    let stages: Vec<usize> = res.log.iter().map(|l| l.stage).collect();
    assert_eq!(stages, vec![0, 0, 1, 1, 1]);
    assert!(res.log.iter().all(|l| l.env_params == Some(AMBIENT_SG.to_array())));
    let seen = seen.into_inner().unwrap();
    assert!(seen.iter().all(|(w, p)| *w == 32 && p.starts_with("a teapot, ") && p.ends_with(" view")));
}

