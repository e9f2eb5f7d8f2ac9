use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sf_core::compositor::{composite, extract_shadow_matte, Placement, DEFAULT_SHADOW_THRESHOLD};
use sf_core::geometry::{load_mesh, normalize_mesh, Camera, FovForm};
use sf_core::guidance::{
    build_prompt, GuidanceError, LightCondition, PhotometricProvider, PromptKind, RemoteClient, RemoteConfig,
    ScoreProvider, ViewRequest, ViewTarget,
};
use sf_core::image::RgbImage;
use sf_core::io::{
    read_linear_image, read_srgb_image, read_texture_map_exr, write_exr, write_gray_png, write_png_srgb,
    write_texture_map_exr,
};
use sf_core::lighting::{outdoor_regions, synthesize_sg_envmap, EnvironmentMap, AMBIENT_SG};
use sf_core::neural_texture::{
    bake_texture_map, fit_neural_texture, rasterize_uv_positions, NeuralTexture, TextureMap,
};
use sf_core::pipeline::{
    run_light_estimation, run_scene_agnostic_generation, run_texture_adaptation, upsample, AdaptInput, Checkpoint,
    GenerateInput, LightInput, RunConfig, RunControl, RunStatus, SceneContext, StepLog,
};
use sf_core::renderer::{render, Material, RenderSettings, Scene, SceneGeometry};

const CHECKPOINT_EVERY: usize = 100;
const TEXTURE_FILE: &str = "texture.sfnt";

#[derive(Parser)]
#[command(name = "sf", version, about = "Texture adaptation, light estimation and compositing of meshes into images")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = Provider::Oracle)]
    provider: Provider,
    #[arg(long, global = true, env = "SF_SERVICE_URL")]
    service_url: Option<String>,
    /// half-angle or paper-literal.
    #[arg(long, global = true, default_value = "half-angle")]
    fov_form: FovForm,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Provider {
    /// Photometric gradients against known targets.
    Oracle,
    /// The score service.
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Object,
    SceneConditioned,
    Apparatus,
    Editing,
}

impl From<KindArg> for PromptKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Object => PromptKind::Object,
            KindArg::SceneConditioned => PromptKind::SceneConditioned,
            KindArg::Apparatus => PromptKind::Apparatus,
            KindArg::Editing => PromptKind::Editing,
        }
    }
}

#[derive(Args)]
struct ViewArgs {
    #[arg(long, default_value_t = 0.0)]
    azimuth: f64,
    #[arg(long, default_value_t = 30.0)]
    elevation: f64,
    #[arg(long, default_value_t = 1.0)]
    fov_multiplier: f64,
    #[arg(long, default_value_t = 512)]
    resolution: usize,
    #[arg(long, default_value_t = 64)]
    spp: u32,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a UV texture map into a neural texture.
    FitTexture {
        #[arg(long)]
        mesh: PathBuf,
        /// Albedo image (PNG/JPEG) or a five-channel EXR map.
        #[arg(long)]
        texture: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        roughness: f64,
        #[arg(long, default_value_t = 0.0)]
        metalness: f64,
    },
    /// Estimate HDR light scales for an LDR environment map.
    EstimateLight {
        #[arg(long)]
        mesh: PathBuf,
        /// Neural texture blob or texture map.
        #[arg(long)]
        texture: PathBuf,
        /// Lat-long LDR map.
        #[arg(long)]
        ldr: PathBuf,
        /// Lat-long HDR map rendered as the oracle target.
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long)]
        scene: Option<PathBuf>,
        /// x,y,size in scene pixels.
        #[arg(long)]
        placement: Option<String>,
        #[arg(long, default_value = "an object")]
        prompt: String,
        #[arg(long, default_value_t = 30.0)]
        elevation: f64,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Adapt a neural texture to a scene under fixed lighting.
    AdaptTexture {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        texture: PathBuf,
        /// HDR map; used when the config enables HDR adaptation.
        #[arg(long)]
        env: Option<PathBuf>,
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        placement: Option<String>,
        #[arg(long, default_value = "an object")]
        prompt: String,
        /// Neural texture rendered as the oracle target.
        #[arg(long)]
        target_texture: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Generate a texture from text under randomized lighting.
    GenerateTexture {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        prompt: String,
        /// Starting texture; a fresh one is initialized when omitted.
        #[arg(long)]
        texture: Option<PathBuf>,
        #[arg(long)]
        target_texture: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render the object with lighting and a shadow and blend it into a scene.
    Compose {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        texture: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        placement: String,
        #[command(flatten)]
        view: ViewArgs,
    },
    /// Render the textured object.
    Render {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        texture: PathBuf,
        #[arg(long)]
        env: Option<PathBuf>,
        /// Uniform unit ambient light instead of an environment map.
        #[arg(long)]
        no_light: bool,
        #[command(flatten)]
        view: ViewArgs,
    },
    /// Print a diffusion or language-model prompt.
    EmitPrompt {
        #[arg(long)]
        object: String,
        #[arg(long)]
        scene: Option<String>,
        /// Defaults to scene-conditioned with a scene, object otherwise.
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        #[arg(long)]
        azimuth: Option<f64>,
        #[arg(long)]
        dark: bool,
        #[arg(long)]
        color: Option<String>,
    },
}

struct Failure {
    category: &'static str,
    message: String,
}

impl From<sf_core::Error> for Failure {
    fn from(e: sf_core::Error) -> Self {
        Failure { category: e.category(), message: e.to_string() }
    }
}

macro_rules! failure_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                sf_core::Error::from(e).into()
            }
        }
    )*};
}

failure_from!(
    sf_core::geometry::GeometryError,
    sf_core::neural_texture::TextureError,
    sf_core::renderer::RenderError,
    sf_core::lighting::LightingError,
    sf_core::compositor::CompositeError,
    sf_core::guidance::GuidanceError,
    sf_core::pipeline::PipelineError,
    sf_core::io::IoError
);

fn usage(message: impl Into<String>) -> Failure {
    Failure { category: "usage", message: message.into() }
}

fn io_failure(e: std::io::Error) -> Failure {
    Failure { category: "io", message: e.to_string() }
}

type CliResult<T = ()> = Result<T, Failure>;

enum Texture {
    Neural(NeuralTexture),
    Map(TextureMap),
}

impl Texture {
    fn material(&self) -> Material<'_> {
        match self {
            Texture::Neural(t) => Material::neural(t),
            Texture::Map(m) => Material::baked(m),
        }
    }
}

fn is_ext(p: &Path, ext: &str) -> bool {
    p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn read_neural(path: &Path) -> CliResult<NeuralTexture> {
    let f = File::open(path).map_err(io_failure)?;
    Ok(NeuralTexture::read_blob(BufReader::new(f))?)
}

fn write_neural(path: &Path, tex: &NeuralTexture) -> CliResult {
    let f = File::create(path).map_err(io_failure)?;
    tex.write_blob(BufWriter::new(f))?;
    Ok(())
}

fn read_texture(path: &Path, cfg: &RunConfig, roughness: f64, metalness: f64) -> CliResult<Texture> {
    if is_ext(path, "sfnt") {
        return Ok(Texture::Neural(read_neural(path)?));
    }
    if is_ext(path, "exr") {
        return Ok(Texture::Map(read_texture_map_exr(path, cfg.texture.bounds)?));
    }
    let img = read_srgb_image(path)?;
    let texels = img.pixels().iter().map(|p| [p[0], p[1], p[2], roughness, metalness]).collect();
    Ok(Texture::Map(TextureMap::new(img.width(), img.height(), texels, cfg.texture.bounds)?))
}

fn read_geometry(path: &Path) -> CliResult<SceneGeometry> {
    Ok(SceneGeometry::new(normalize_mesh(&load_mesh(path)?)?))
}

fn read_env(path: &Path) -> CliResult<EnvironmentMap> {
    Ok(EnvironmentMap::from_image(&read_linear_image(path)?)?)
}

fn parse_placement(text: &str, elevation: f64) -> CliResult<Placement> {
    let v: Vec<f64> = text.split(',').map(|s| s.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| {
        usage(format!("placement `{text}` must be x,y,size"))
    })?;
    match v.as_slice() {
        [x, y, size] => Ok(Placement { position: [*x, *y], size: *size, elevation }),
        _ => Err(usage(format!("placement `{text}` must be x,y,size"))),
    }
}

fn scene_context<'a>(
    image: &'a Option<RgbImage>,
    placement: &Option<String>,
    elevation: f64,
) -> CliResult<Option<SceneContext<'a>>> {
    match (image, placement) {
        (Some(image), Some(p)) => {
            let placement = parse_placement(p, elevation)?;
            placement.validate(image.width(), image.height())?;
            Ok(Some(SceneContext { image, placement }))
        }
        (Some(_), None) => Err(usage("--scene needs --placement")),
        _ => Ok(None),
    }
}

fn remote_client(g: &Global, cfg: &RunConfig, seed: u64) -> CliResult<RemoteClient> {
    let mut rc = cfg.guidance.remote.clone().unwrap_or_else(|| RemoteConfig::new(""));
    if let Some(url) = &g.service_url {
        rc.url = url.clone();
    }
    if rc.url.is_empty() {
        return Err(usage("remote provider needs --service-url or SF_SERVICE_URL"));
    }
    rc.run_id = format!("sf-{seed}");
    let client = RemoteClient::new(rc)?;
    client.health()?;
    Ok(client)
}

fn run_control(out: &Path, name: &str, resume: &Option<PathBuf>) -> CliResult<RunControl> {
    Ok(RunControl {
        checkpoint_path: Some(out.join(format!("{name}.ckpt"))),
        checkpoint_every: CHECKPOINT_EVERY,
        stop_after: None,
        resume: resume.as_ref().map(Checkpoint::load).transpose()?,
    })
}

fn write_log(out: &Path, name: &str, log: &[StepLog], status: RunStatus) -> CliResult {
    let mut f = BufWriter::new(File::create(out.join(format!("{name}.log"))).map_err(io_failure)?);
    for entry in log {
        writeln!(f, "{entry}").map_err(io_failure)?;
    }
    if let RunStatus::Stopped { at } = status {
        writeln!(f, "stopped at {at}").map_err(io_failure)?;
    }
    f.flush().map_err(io_failure)
}

fn texture_oracle<'a>(
    geometry: &'a SceneGeometry,
    target: &'a NeuralTexture,
    env_for: impl Fn(&ViewRequest) -> EnvironmentMap + Sync + 'a,
) -> PhotometricProvider<impl Fn(&ViewRequest) -> Result<RgbImage, GuidanceError> + Sync + 'a> {
    PhotometricProvider::new(move |req: &ViewRequest| {
        let env = env_for(req);
        let scene = Scene { geometry, material: Material::neural(target), env: &env };
        let out = render(&scene, req.camera, &RenderSettings::new(req.resolution, req.spp, req.seed))
            .map_err(|e| GuidanceError::Protocol(format!("oracle render: {e}")))?;
        let img = match req.ctx.solid_background {
            Some(bg) => out.over_background(bg),
            None => out.radiance,
        };
        Ok(upsample(&img, req.image.width() / req.resolution))
    })
}

#[derive(Serialize)]
struct LightFile<'a> {
    far: f64,
    near: f64,
    dark: bool,
    prompt: &'a str,
}

fn run(cli: Cli) -> CliResult {
    let g = &cli.global;
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    let seed = cfg.seed;
    let out = &g.out;
    let prepare_out = || std::fs::create_dir_all(out).map_err(io_failure);

    match &cli.command {
        Command::EmitPrompt { object, scene, kind, azimuth, dark, color } => {
            let kind = kind.map(PromptKind::from).unwrap_or(if scene.is_some() {
                PromptKind::SceneConditioned
            } else {
                PromptKind::Object
            });
            let light = LightCondition { dark: *dark, color: color.clone() };
            println!("{}", build_prompt(kind, object, scene.as_deref(), *azimuth, &light)?);
        }

        Command::FitTexture { mesh, texture, roughness, metalness } => {
            prepare_out()?;
            let geometry = read_geometry(mesh)?;
            let Texture::Map(map) = read_texture(texture, &cfg, *roughness, *metalness)? else {
                return Err(usage("fit-texture needs an image or EXR texture map"));
            };
            let uvpos = rasterize_uv_positions(&geometry.mesh, map.height, map.width)?;
            let mut tex = NeuralTexture::new(cfg.texture, seed)?;
            let mut fit = cfg.fit.clone();
            fit.seed = seed;
            let report = fit_neural_texture(&mut tex, &map, &uvpos, &fit)?;
            log::info!("texture fit mse {:.6e}", report.final_loss);
            write_neural(&out.join(TEXTURE_FILE), &tex)?;
            let baked = bake_texture_map(&tex, &rasterize_uv_positions(&geometry.mesh, cfg.texture_resolution, cfg.texture_resolution)?)?;
            write_texture_map_exr(out.join("texture_map.exr"), &baked)?;
        }

        Command::Render { mesh, texture, env, no_light, view } => {
            prepare_out()?;
            let geometry = read_geometry(mesh)?;
            let tex = read_texture(texture, &cfg, 0.5, 0.0)?;
            let env = match (env, no_light) {
                (_, true) => synthesize_sg_envmap(AMBIENT_SG, 16, 32),
                (Some(p), false) => read_env(p)?,
                (None, false) => return Err(usage("render needs --env or --no-light")),
            };
            let mut cam = Camera::orbit(view.azimuth, view.elevation, view.fov_multiplier);
            cam.fov_form = g.fov_form;
            let scene = Scene { geometry: &geometry, material: tex.material(), env: &env };
            let img = render(&scene, &cam, &RenderSettings::new(view.resolution, view.spp, seed))?;
            write_exr(out.join("render.exr"), &img.radiance)?;
            write_png_srgb(out.join("render.png"), &img.radiance)?;
            write_gray_png(out.join("render_alpha.png"), &img.alpha)?;
        }

        Command::Compose { mesh, texture, scene, env, placement, view } => {
            prepare_out()?;
            let geometry = read_geometry(mesh)?;
            let tex = read_texture(texture, &cfg, 0.5, 0.0)?;
            let env = read_env(env)?;
            let scene_img = read_linear_image(scene)?;
            let place = parse_placement(placement, view.elevation)?;
            let mut cam = Camera::orbit(view.azimuth, view.elevation, view.fov_multiplier);
            cam.fov_form = g.fov_form;
            let s = Scene { geometry: &geometry, material: tex.material(), env: &env };
            let img = render(&s, &cam, &RenderSettings::new(view.resolution, view.spp, seed).with_floor(true))?;
            let matte = match &img.floor_radiance {
                Some(f) => Some(extract_shadow_matte(f, img.floor_alpha.as_ref(), DEFAULT_SHADOW_THRESHOLD)?),
                None => None,
            };
            let comp = composite(&scene_img, &img, matte.as_ref(), &place)?;
            write_exr(out.join("composite.exr"), &comp)?;
            write_png_srgb(out.join("composite.png"), &comp)?;
            if let Some(m) = &matte {
                write_gray_png(out.join("shadow_matte.png"), &m.opacity)?;
            }
        }

        Command::EstimateLight { mesh, texture, ldr, target, scene, placement, prompt, elevation, resume } => {
            prepare_out()?;
            let geometry = read_geometry(mesh)?;
            let tex = read_texture(texture, &cfg, 0.5, 0.0)?;
            let mut ldr_map = read_env(ldr)?;
            ldr_map.regions = outdoor_regions(&ldr_map, cfg.light.thresholds.tau_o);
            let scene_img = scene.as_ref().map(read_linear_image).transpose()?;
            let input = LightInput {
                geometry: &geometry,
                material: tex.material(),
                ldr: &ldr_map,
                scene: scene_context(&scene_img, placement, *elevation)?,
                object_prompt: prompt.clone(),
                elevation: *elevation,
                seed,
            };
            let control = run_control(out, "light", resume)?;
            let res = match g.provider {
                Provider::Remote => {
                    let client = remote_client(g, &cfg, seed)?;
                    run_light_estimation(&input, &client, &cfg.light, cfg.guidance.weighting, &control)?
                }
                Provider::Oracle => {
                    let target = target.as_ref().ok_or_else(|| usage("oracle light estimation needs --target"))?;
                    let target_env = read_env(target)?;
                    let sphere = SceneGeometry::new(sf_core::lighting::build_apparatus_scene(&geometry.mesh).sphere);
                    let material = tex.material();
                    let oracle = PhotometricProvider::new(|req: &ViewRequest| {
                        let (geo, mat) = match req.target {
                            ViewTarget::Object => (&geometry, material),
                            ViewTarget::Apparatus => (&sphere, Material::diffuse([1.0; 3])),
                        };
                        let s = Scene { geometry: geo, material: mat, env: &target_env };
                        render(&s, req.camera, &RenderSettings::new(req.resolution, req.spp, req.seed))
                            .map(|o| o.radiance)
                            .map_err(|e| GuidanceError::Protocol(format!("oracle render: {e}")))
                    });
                    run_light_estimation(&input, &oracle, &cfg.light, cfg.guidance.weighting, &control)?
                }
            };
            write_log(out, "light", &res.log, res.status)?;
            let file = LightFile { far: res.scales.far, near: res.scales.near, dark: res.dark, prompt: &res.prompt };
            let text = toml::to_string(&file).map_err(|e| usage(e.to_string()))?;
            std::fs::write(out.join("light.toml"), text).map_err(io_failure)?;
            write_exr(out.join("env_hdr.exr"), &res.env.radiance_image())?;
            println!("far {:.6} near {:.6}", res.scales.far, res.scales.near);
        }

        Command::AdaptTexture { mesh, texture, env, scene, placement, prompt, target_texture, resume } => {
            prepare_out()?;
            let geometry = read_geometry(mesh)?;
            let init = read_neural(texture)?;
            let light = match (cfg.adapt.use_hdr, env) {
                (true, Some(p)) => read_env(p)?,
                (true, None) => return Err(usage("config enables HDR adaptation but --env is missing")),
                (false, _) => synthesize_sg_envmap(AMBIENT_SG, 16, 32),
            };
            let scene_img = scene.as_ref().map(read_linear_image).transpose()?;
            let input = AdaptInput {
                geometry: &geometry,
                texture: &init,
                env: &light,
                scene: scene_context(&scene_img, placement, cfg.adapt.elevation)?,
                prompt: prompt.clone(),
                view_prompts: false,
                fov_form: g.fov_form,
                seed,
            };
            let control = run_control(out, "adapt", resume)?;
            let target = target_texture.as_deref().map(read_neural).transpose()?;
            let provider = provider_for(g, &cfg, seed, target.as_ref(), &geometry, Some(&light))?;
            let res = run_texture_adaptation(&input, provider.as_ref(), &cfg.adapt, cfg.guidance.weighting, &control)?;
            write_log(out, "adapt", &res.log, res.status)?;
            write_neural(&out.join(TEXTURE_FILE), &res.texture)?;
        }

        Command::GenerateTexture { mesh, prompt, texture, target_texture, resume } => {
            prepare_out()?;
            let geometry = read_geometry(mesh)?;
            let init = match texture {
                Some(p) => read_neural(p)?,
                None => NeuralTexture::new(cfg.texture, seed)?,
            };
            let input = GenerateInput {
                geometry: &geometry,
                texture: &init,
                object_prompt: prompt.clone(),
                fov_form: g.fov_form,
                seed,
            };
            let control = run_control(out, "generate", resume)?;
            let target = target_texture.as_deref().map(read_neural).transpose()?;
            let provider = provider_for(g, &cfg, seed, target.as_ref(), &geometry, None)?;
            let res = run_scene_agnostic_generation(
                &input,
                provider.as_ref(),
                &cfg.generate,
                cfg.guidance.weighting,
                &control,
            )?;
            write_log(out, "generate", &res.log, res.status)?;
            write_neural(&out.join(TEXTURE_FILE), &res.texture)?;
        }
    }
    Ok(())
}

/// Remote client, or a photometric oracle rendering `target_texture` under
/// the light the driver used for the view.
fn provider_for<'a>(
    g: &Global,
    cfg: &RunConfig,
    seed: u64,
    target: Option<&'a NeuralTexture>,
    geometry: &'a SceneGeometry,
    fixed_light: Option<&'a EnvironmentMap>,
) -> CliResult<Box<dyn ScoreProvider + 'a>> {
    if g.provider == Provider::Remote {
        return Ok(Box::new(remote_client(g, cfg, seed)?));
    }
    let target = target.ok_or_else(|| usage("oracle mode needs --target-texture"))?;
    let (h, w) = cfg.generate.env_size;
    Ok(Box::new(texture_oracle(geometry, target, move |req| match fixed_light {
        Some(env) => env.clone(),
        None => sg_env_from_embedding(&req.ctx.class_embedding, h, w),
    })))
}

fn sg_env_from_embedding(e: &[f64], h: usize, w: usize) -> EnvironmentMap {
    match e {
        [c_x, c_y, c_r, c_v, b_v] => {
            synthesize_sg_envmap(sf_core::lighting::SgParams { c_x: *c_x, c_y: *c_y, c_r: *c_r, c_v: *c_v, b_v: *b_v }, h, w)
        }
        _ => synthesize_sg_envmap(AMBIENT_SG, h, w),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_target(false).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.category, f.message);
            ExitCode::FAILURE
        }
    }
}
