//! Five-channel PBR appearance model: a multiresolution hash encoding of 3D
//! surface positions feeding a bias-free two-layer MLP whose sigmoid output
//! is remapped into per-channel bounds.

mod encoding;
mod fit;
mod network;
mod uvmap;

use serde::{Deserialize, Serialize};

pub use encoding::HashEncodingConfig;
pub use fit::{fit_neural_texture, texture_mse, FitReport, FitSchedule};
pub use network::{
    GradientSink, HiddenActivation, NeuralTexture, NeuralTextureConfig, ParameterGroup, SparseGradient,
    Workspace, TEXTURE_BLOB_VERSION,
};
pub use uvmap::{bake_texture_map, nearest_valid_fill, rasterize_uv_positions, TextureMap, UvPositionMap};

pub const PBR_CHANNELS: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum TextureError {
    #[error("UV overlap detected")]
    UvOverlap,
    #[error("empty UV coverage")]
    EmptyCoverage,
    #[error("fit diverged; reduce learning rate")]
    Diverged,
    #[error("invalid channel bounds: {0}")]
    InvalidBounds(String),
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("texture blob: {0}")]
    Blob(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-point PBR parameters: diffuse albedo, roughness and metalness.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PbrSample {
    pub kd: [f64; 3],
    pub roughness: f64,
    pub metalness: f64,
}

impl PbrSample {
    pub fn to_array(self) -> [f64; PBR_CHANNELS] {
        [self.kd[0], self.kd[1], self.kd[2], self.roughness, self.metalness]
    }

    pub fn from_array(a: [f64; PBR_CHANNELS]) -> Self {
        Self { kd: [a[0], a[1], a[2]], roughness: a[3], metalness: a[4] }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// `(min, max)` output range per channel, in the order
/// `kd.r, kd.g, kd.b, roughness, metalness`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelBounds(pub [(f64, f64); PBR_CHANNELS]);

impl Default for ChannelBounds {
    fn default() -> Self {
        // Roughness floor keeps the GGX lobe away from its delta limit.
        Self([(0.0, 1.0), (0.0, 1.0), (0.0, 1.0), (0.08, 1.0), (0.0, 1.0)])
    }
}

impl ChannelBounds {
    pub fn validate(&self) -> Result<(), TextureError> {
        for (i, &(lo, hi)) in self.0.iter().enumerate() {
            if !(lo < hi) {
                return Err(TextureError::InvalidBounds(format!("channel {i}: min {lo} >= max {hi}")));
            }
            let ok = match i {
                0..=2 | 4 => lo >= 0.0 && hi <= 1.0,
                _ => lo > 0.0 && hi <= 1.0,
            };
            if !ok {
                return Err(TextureError::InvalidBounds(format!("channel {i}: [{lo}, {hi}] outside allowed range")));
            }
        }
        Ok(())
    }

    pub fn midpoint(&self) -> [f64; PBR_CHANNELS] {
        self.0.map(|(lo, hi)| 0.5 * (lo + hi))
    }

    pub fn contains(&self, v: &[f64; PBR_CHANNELS]) -> bool {
        self.0.iter().zip(v).all(|(&(lo, hi), &x)| x >= lo && x <= hi)
    }

    pub fn clamp(&self, v: [f64; PBR_CHANNELS]) -> [f64; PBR_CHANNELS] {
        let mut out = v;
        for (o, &(lo, hi)) in out.iter_mut().zip(&self.0) {
            *o = o.clamp(lo, hi);
        }
        out
    }
}
