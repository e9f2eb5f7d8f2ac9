//! Environment lighting: lat-long maps, bright-region extraction, learnable
//! per-region scales, indoor LDR construction, the white-sphere apparatus and
//! spherical-Gaussian augmentation maps.

mod apparatus;
pub mod equirect;
mod indoor;
mod sg;

use serde::{Deserialize, Serialize};

use crate::image::RgbImage;
use crate::math::{intensity, Rgb};

pub use apparatus::{
    build_apparatus_scene, ApparatusScene, APPARATUS_LOSS_WEIGHTS, APPARATUS_OBJECT_VIEWS, APPARATUS_PROMPT,
};
pub use indoor::{indoor_ldr, IndoorLdr, IndoorOptions, SceneCamera};
pub use sg::{synthesize_sg_envmap, SgParams, AMBIENT_SG};

pub const DEFAULT_ENV_HEIGHT: usize = 256;
pub const DEFAULT_ENV_WIDTH: usize = 512;

#[derive(Debug, thiserror::Error)]
pub enum LightingError {
    #[error("anchor not covered by depth")]
    AnchorNotCovered,
    #[error("environment has zero energy")]
    ZeroEnergy,
    #[error("invalid environment map: {0}")]
    Invalid(String),
    #[error("dimension mismatch: {0}")]
    Shape(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Ldr,
    Hdr,
}

/// Region membership of a bin.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Background,
    Far,
    Near,
}

/// Bright-region thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub tau_f: f64,
    pub tau_n: f64,
    pub tau_o: f64,
    /// Depth split between near and far lights; `+inf` by default.
    #[serde(with = "crate::lighting::inf_as_string")]
    pub tau_d: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { tau_f: 0.8, tau_n: 0.95, tau_o: 0.9, tau_d: f64::INFINITY }
    }
}

/// TOML has no infinity literal that every reader accepts, so `tau_d` also
/// round-trips as the string `"inf"`.
pub(crate) mod inf_as_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.trim() {
                "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
                other => other.parse().map_err(serde::de::Error::custom),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LightRegions {
    pub width: usize,
    pub height: usize,
    pub far: Vec<bool>,
    pub near: Vec<bool>,
    pub thresholds: Thresholds,
}

impl LightRegions {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            far: vec![false; width * height],
            near: vec![false; width * height],
            thresholds: Thresholds::default(),
        }
    }

    pub fn region(&self, bin: usize) -> Region {
        if self.far[bin] {
            Region::Far
        } else if self.near[bin] {
            Region::Near
        } else {
            Region::Background
        }
    }

    pub fn is_disjoint(&self) -> bool {
        self.far.iter().zip(&self.near).all(|(f, n)| !(*f && *n))
    }

    pub fn far_count(&self) -> usize {
        self.far.iter().filter(|v| **v).count()
    }

    pub fn near_count(&self) -> usize {
        self.near.iter().filter(|v| **v).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightScales {
    pub far: f64,
    pub near: f64,
}

impl Default for LightScales {
    fn default() -> Self {
        Self { far: 1.0, near: 1.0 }
    }
}

impl LightScales {
    pub fn to_array(self) -> [f64; 2] {
        [self.far, self.near]
    }

    pub fn from_array(a: [f64; 2]) -> Self {
        Self { far: a[0], near: a[1] }
    }

    pub fn is_valid(&self) -> bool {
        self.far.is_finite() && self.near.is_finite() && self.far >= 0.0 && self.near >= 0.0
    }
}

/// Lat-long environment map: an LDR grid plus region masks and per-region
/// scales. Radiance at a bin is `exposure * scale(region) * ldr`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentMap {
    pub width: usize,
    pub height: usize,
    pub ldr: Vec<Rgb>,
    pub kind: EnvKind,
    pub regions: LightRegions,
    pub scales: LightScales,
    /// Global multiplier applied after all per-region terms.
    pub exposure: f64,
}

impl EnvironmentMap {
    pub fn from_ldr(width: usize, height: usize, ldr: Vec<Rgb>) -> Result<Self, LightingError> {
        if width == 0 || height == 0 || ldr.len() != width * height {
            return Err(LightingError::Shape(format!("{} bins for a {height}x{width} map", ldr.len())));
        }
        if ldr.iter().any(|c| c.iter().any(|v| !v.is_finite() || *v < 0.0)) {
            return Err(LightingError::Invalid("values must be finite and non-negative".into()));
        }
        Ok(Self {
            width,
            height,
            ldr,
            kind: EnvKind::Ldr,
            regions: LightRegions::empty(width, height),
            scales: LightScales::default(),
            exposure: 1.0,
        })
    }

    pub fn constant(width: usize, height: usize, value: Rgb) -> Self {
        Self::from_ldr(width, height, vec![value; width * height]).expect("constant map is valid")
    }

    pub fn from_image(img: &RgbImage) -> Result<Self, LightingError> {
        Self::from_ldr(img.width(), img.height(), img.pixels().to_vec())
    }

    /// Same map with radiance multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self { exposure: self.exposure * s, ..self.clone() }
    }

    pub fn bin_index(&self, i: usize, j: usize) -> usize {
        i * self.width + j
    }

    pub fn region_scale(&self, region: Region) -> f64 {
        match region {
            Region::Background => 1.0,
            Region::Far => self.scales.far,
            Region::Near => self.scales.near,
        }
    }

    pub fn radiance(&self, bin: usize) -> Rgb {
        let s = self.exposure * self.region_scale(self.regions.region(bin));
        self.ldr[bin].map(|v| v * s)
    }

    pub fn radiance_image(&self) -> RgbImage {
        RgbImage::from_fn(self.width, self.height, |x, y| self.radiance(y * self.width + x))
    }

    pub fn ldr_image(&self) -> RgbImage {
        RgbImage::from_pixels(self.width, self.height, self.ldr.clone())
    }

    pub fn intensity(&self, bin: usize) -> f64 {
        intensity(self.ldr[bin])
    }
}

/// Outdoor rule: the upper hemisphere and any bright bin are far light;
/// no near light.
pub fn outdoor_regions(ldr: &EnvironmentMap, tau_o: f64) -> LightRegions {
    let (w, h) = (ldr.width, ldr.height);
    let mut regions = LightRegions::empty(w, h);
    regions.thresholds.tau_o = tau_o;
    for i in 0..h {
        for j in 0..w {
            let b = i * w + j;
            regions.far[b] = (i as f64) / (h as f64) < 0.5 || ldr.intensity(b) >= tau_o;
        }
    }
    regions
}

/// Indoor rule: bright bins split by depth into far (`depth >= tau_d`) and
/// near (`depth < tau_d`) lights with their own intensity thresholds.
/// An infinite `tau_d` disables the far region, including unseen bins whose
/// depth is the `+inf` sentinel.
pub fn indoor_regions(ldr: &EnvironmentMap, depth: &[f64], thresholds: Thresholds) -> Result<LightRegions, LightingError> {
    let (w, h) = (ldr.width, ldr.height);
    if depth.len() != w * h {
        return Err(LightingError::Shape(format!("depth has {} bins, map has {}", depth.len(), w * h)));
    }
    if thresholds.tau_n < thresholds.tau_f {
        log::warn!("near threshold below far threshold");
    }
    let mut regions = LightRegions::empty(w, h);
    regions.thresholds = thresholds;
    for b in 0..w * h {
        let ii = ldr.intensity(b);
        if thresholds.tau_d.is_finite() && depth[b] >= thresholds.tau_d {
            regions.far[b] = ii >= thresholds.tau_f;
        } else {
            regions.near[b] = ii >= thresholds.tau_n;
        }
    }
    Ok(regions)
}

/// Attaches regions and scales to an LDR map, producing the HDR map used
/// for lighting.
pub fn apply_light_scales(ldr: &EnvironmentMap, regions: &LightRegions, scales: LightScales) -> Result<EnvironmentMap, LightingError> {
    if regions.width != ldr.width || regions.height != ldr.height {
        return Err(LightingError::Shape("region masks do not match the map".into()));
    }
    if !scales.is_valid() {
        return Err(LightingError::Invalid("light scales must be finite and non-negative".into()));
    }
    Ok(EnvironmentMap { regions: regions.clone(), scales, kind: EnvKind::Hdr, ..ldr.clone() })
}

/// Mean intensity of background bins and of light bins, used for the
/// dark-scene prompt rule. Light bins use the scaled radiance.
pub fn region_mean_intensities(env: &EnvironmentMap) -> (f64, f64) {
    let (mut bg, mut nb, mut li, mut nl) = (0.0, 0usize, 0.0, 0usize);
    for b in 0..env.ldr.len() {
        let v = intensity(env.radiance(b));
        match env.regions.region(b) {
            Region::Background => {
                bg += v;
                nb += 1;
            }
            _ => {
                li += v;
                nl += 1;
            }
        }
    }
    (if nb > 0 { bg / nb as f64 } else { 0.0 }, if nl > 0 { li / nl as f64 } else { 0.0 })
}
