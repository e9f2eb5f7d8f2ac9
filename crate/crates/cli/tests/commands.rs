use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sf_core::geometry::primitives::uv_cube;
use sf_core::geometry::write_obj;
use sf_core::image::RgbImage;
use sf_core::io::write_exr;
use sf_core::neural_texture::HashEncodingConfig;
use sf_core::pipeline::{RunConfig, Stage};

fn sf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sf")).args(args).env_remove("SF_SERVICE_URL").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Fixture { dir: tempfile::tempdir().unwrap() };
        std::fs::write(f.path("cube.obj"), write_obj(&uv_cube())).unwrap();
        let tex = RgbImage::from_fn(16, 16, |x, y| if (x / 4 + y / 4) % 2 == 0 { [0.8, 0.2, 0.1] } else { [0.1, 0.3, 0.9] });
        image_png(&f.path("albedo.png"), &tex);
        let mut cfg = RunConfig::default();
        cfg.texture.encoding = HashEncodingConfig { levels: 4, base_resolution: 4, growth: 1.5, log2_table_size: 8, features: 2 };
        cfg.texture.hidden_width = 8;
        cfg.fit.iterations = 30;
        cfg.texture_resolution = 16;
        cfg.light.schedule.total_iterations = 15;
        cfg.light.schedule.lr_light = 0.1;
        cfg.light.schedule.stages = vec![Stage { fraction: 1.0, resolution: 12, spp: 2, t_range: (750, 990) }];
        cfg.generate.schedule.total_iterations = 3;
        cfg.generate.schedule.stages = vec![Stage { fraction: 1.0, resolution: 8, spp: 1, t_range: (500, 990) }];
        cfg.generate.schedule.workers = 1;
        cfg.generate.schedule.loss_weights = vec![1.0];
        cfg.generate.score_resolution = 16;
        cfg.generate.env_size = (8, 16);
        std::fs::write(f.path("run.toml"), cfg.to_toml_string().unwrap()).unwrap();
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }
}

fn image_png(path: &Path, img: &RgbImage) {
    sf_core::io::write_png_encoded(path, img).unwrap();
}

#[test]
fn emit_prompt_fills_the_scene_template() {
    let o = sf(&["emit-prompt", "--object", "a leather sofa", "--scene", "a swamp"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("Now, imagine a picture where"));
    assert!(text.contains("[the scene]: a swamp"));
    assert!(text.contains("[the object]: a leather sofa"));
}

#[test]
fn emit_prompt_direct_kind_with_view_and_darkness() {
    let o = sf(&["emit-prompt", "--object", "a teapot", "--kind", "object", "--azimuth", "170", "--dark"]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8(o.stdout).unwrap().trim(), "a teapot, back view, in a dark environment");
}

#[test]
fn fit_then_render_without_light() {
    let f = Fixture::new();
    let out = f.s("fit");
    let o = sf(&["fit-texture", "--config", &f.s("run.toml"), "--out", &out, "--mesh", &f.s("cube.obj"), "--texture", &f.s("albedo.png")]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(f.path("fit/texture.sfnt").exists() && f.path("fit/texture_map.exr").exists());

    let r = f.s("render");
    let tex = f.s("fit/texture.sfnt");
    let args = ["render", "--out", &r, "--mesh", &f.s("cube.obj"), "--texture", &tex, "--no-light", "--resolution", "24", "--spp", "2"];
    let o = sf(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let png = std::fs::read(f.path("render/render.png")).unwrap();
    assert!(f.path("render/render.exr").exists());
    // Same seed, same bytes.
    assert!(sf(&args).status.success());
    assert_eq!(png, std::fs::read(f.path("render/render.png")).unwrap());
}

#[test]
fn oracle_light_estimation_writes_scales() {
    let f = Fixture::new();
    let (w, h) = (32, 16);
    let ldr = RgbImage::from_fn(w, h, |x, y| if y < 4 && (8..12).contains(&x) { [1.0; 3] } else { [0.3, 0.3, 0.35] });
    // Outdoor regions: the upper half is far light.
    let target = RgbImage::from_fn(w, h, |x, y| {
        let p = ldr.get(x, y);
        if y < h / 2 { p.map(|v| v * 3.0) } else { p }
    });
    write_exr(f.path("ldr.exr"), &ldr).unwrap();
    write_exr(f.path("target.exr"), &target).unwrap();
    let out = f.s("light");
    let o = sf(&[
        "estimate-light", "--config", &f.s("run.toml"), "--out", &out, "--provider", "oracle", "--mesh", &f.s("cube.obj"),
        "--texture", &f.s("albedo.png"), "--ldr", &f.s("ldr.exr"), "--target", &f.s("target.exr"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(f.path("light/light.toml")).unwrap();
    let v: toml::Value = toml::from_str(&text).unwrap();
    let far = v["far"].as_float().unwrap();
    assert!(far > 1.5, "{text}");
    assert!(f.path("light/env_hdr.exr").exists() && f.path("light/light.ckpt").exists());
    assert_eq!(std::fs::read_to_string(f.path("light/light.log")).unwrap().lines().count(), 15);
}

#[test]
fn oracle_generation_is_reproducible() {
    let f = Fixture::new();
    let cfg = f.s("run.toml");
    let fit = f.s("fit");
    assert!(sf(&["fit-texture", "--config", &cfg, "--out", &fit, "--mesh", &f.s("cube.obj"), "--texture", &f.s("albedo.png")])
        .status
        .success());
    let target = f.s("fit/texture.sfnt");
    let run = |out: &str| {
        let o = sf(&[
            "generate-texture", "--config", &cfg, "--out", out, "--seed", "9", "--mesh", &f.s("cube.obj"), "--prompt",
            "a crate", "--target-texture", &target,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    };
    run(&f.s("g1"));
    run(&f.s("g2"));
    for name in ["texture.sfnt", "generate.ckpt", "generate.log"] {
        assert_eq!(std::fs::read(f.path("g1").join(name)).unwrap(), std::fs::read(f.path("g2").join(name)).unwrap());
    }
}

#[test]
fn failures_report_a_category() {
    let f = Fixture::new();
    let o = sf(&["generate-texture", "--out", &f.s("x"), "--provider", "remote", "--mesh", &f.s("cube.obj"), "--prompt", "a"]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error[usage]: remote provider needs"), "{}", stderr(&o));

    std::fs::write(f.path("bad.toml"), "schema_version = 9\n").unwrap();
    let o = sf(&["render", "--config", &f.s("bad.toml"), "--mesh", &f.s("cube.obj"), "--texture", &f.s("albedo.png"), "--no-light"]);
    assert_eq!(stderr(&o).lines().last().unwrap(), "error[config]: config: config schema version 9 does not match supported version 1");

    std::fs::write(f.path("junk.ckpt"), b"SFCK\x01\x00\x00\x00 not a checkpoint").unwrap();
    let o = sf(&[
        "estimate-light", "--config", &f.s("run.toml"), "--out", &f.s("y"), "--mesh", &f.s("cube.obj"), "--texture",
        &f.s("albedo.png"), "--ldr", &f.s("albedo.png"), "--resume", &f.s("junk.ckpt"),
    ]);
    assert_eq!(stderr(&o).lines().last().unwrap(), "error[checkpoint]: checkpoint corrupt");

    let o = sf(&["render", "--mesh", &f.s("missing.obj"), "--texture", &f.s("albedo.png"), "--no-light"]);
    assert!(stderr(&o).lines().last().unwrap().starts_with("error[geometry]:"), "{}", stderr(&o));
}

#[test]
fn unreachable_service_is_a_guidance_error() {
    let f = Fixture::new();
    let mut cfg = RunConfig::default();
    let mut remote = sf_core::guidance::RemoteConfig::new("http://127.0.0.1:9");
    remote.retries = 1;
    remote.backoff_ms = 10;
    cfg.guidance.remote = Some(remote);
    std::fs::write(f.path("remote.toml"), cfg.to_toml_string().unwrap()).unwrap();
    let o = sf(&[
        "generate-texture", "--config", &f.s("remote.toml"), "--out", &f.s("z"), "--provider", "remote", "--mesh",
        &f.s("cube.obj"), "--prompt", "a crate",
    ]);
    assert!(!o.status.success());
    let last = stderr(&o).lines().last().unwrap().to_string();
    assert!(last.starts_with("error[guidance]: guidance service unavailable after 2 attempts"), "{last}");
}
