use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::math::{sigmoid, softplus, Vec3};

use super::encoding::HashEncodingConfig;
use super::{ChannelBounds, PbrSample, TextureError, PBR_CHANNELS};

pub const TEXTURE_BLOB_VERSION: u32 = 1;
const TEXTURE_MAGIC: &[u8; 4] = b"SFNT";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    #[default]
    Softplus,
    Relu,
}

impl HiddenActivation {
    fn apply(self, x: f64) -> f64 {
        match self {
            HiddenActivation::Softplus => softplus(x),
            HiddenActivation::Relu => x.max(0.0),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            HiddenActivation::Softplus => sigmoid(x),
            HiddenActivation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuralTextureConfig {
    pub encoding: HashEncodingConfig,
    pub hidden_width: usize,
    pub activation: HiddenActivation,
    pub bounds: ChannelBounds,
}

impl Default for NeuralTextureConfig {
    fn default() -> Self {
        Self {
            encoding: HashEncodingConfig::default(),
            hidden_width: 32,
            activation: HiddenActivation::Softplus,
            bounds: ChannelBounds::default(),
        }
    }
}

/// Named slice of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParameterGroup {
    pub name: &'static str,
    pub offset: usize,
    pub len: usize,
    pub shape: Vec<usize>,
}

/// Hash-encoded neural field mapping object-space positions to PBR channels.
///
/// Parameters live in one flat vector laid out as
/// `[hash tables | W1 (hidden x input) | W2 (5 x hidden)]`; there are no
/// bias terms.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralTexture {
    config: NeuralTextureConfig,
    params: Vec<f64>,
}

/// Per-evaluation scratch buffers, reused across calls and kept for
/// the backward pass.
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    corners: Vec<(usize, f64)>,
    encoded: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    sig: [f64; PBR_CHANNELS],
}

/// Destination for parameter gradients.
pub trait GradientSink {
    fn add(&mut self, index: usize, value: f64);
}

impl GradientSink for [f64] {
    fn add(&mut self, index: usize, value: f64) {
        self[index] += value;
    }
}

impl GradientSink for Vec<f64> {
    fn add(&mut self, index: usize, value: f64) {
        self[index] += value;
    }
}

#[derive(Default)]
struct SlotHasher(u64);

impl Hasher for SlotHasher {
    fn finish(&self) -> u64 {
        self.0
    }
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 ^ b as u64).wrapping_mul(0x100_0000_01b3);
        }
    }
    fn write_usize(&mut self, i: usize) {
        self.0 = (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    }
}

/// Gradient accumulator that keeps hash-table entries sparse and the MLP
/// weights dense. Merging into a dense vector is order-independent per
/// accumulator, so merging a fixed sequence of accumulators is reproducible.
#[derive(Clone, Debug)]
pub struct SparseGradient {
    table_len: usize,
    table: HashMap<usize, f64, BuildHasherDefault<SlotHasher>>,
    dense: Vec<f64>,
}

impl SparseGradient {
    pub fn new(texture: &NeuralTexture) -> Self {
        let table_len = texture.config.encoding.parameter_count();
        Self { table_len, table: HashMap::default(), dense: vec![0.0; texture.params.len() - table_len] }
    }

    pub fn merge_into(&self, dense: &mut [f64]) {
        for (&i, &v) in &self.table {
            dense[i] += v;
        }
        for (d, v) in dense[self.table_len..].iter_mut().zip(&self.dense) {
            *d += v;
        }
    }

    pub fn touched_table_entries(&self) -> usize {
        self.table.len()
    }
}

impl GradientSink for SparseGradient {
    fn add(&mut self, index: usize, value: f64) {
        if index < self.table_len {
            *self.table.entry(index).or_insert(0.0) += value;
        } else {
            self.dense[index - self.table_len] += value;
        }
    }
}

impl NeuralTexture {
    /// Random initialization: table entries uniform in `±1e-4`, `W1` Xavier
    /// uniform, `W2` zero so that the initial output is the bounds midpoint.
    pub fn new(config: NeuralTextureConfig, seed: u64) -> Result<Self, TextureError> {
        config.bounds.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tex = Self::zeros(config)?;
        let table = config.encoding.parameter_count();
        for p in &mut tex.params[..table] {
            *p = rng.gen_range(-1e-4..1e-4);
        }
        let (i, h) = (config.encoding.output_dim(), config.hidden_width);
        let limit = (6.0 / (i + h) as f64).sqrt();
        for p in &mut tex.params[table..table + i * h] {
            *p = rng.gen_range(-limit..limit);
        }
        Ok(tex)
    }

    pub fn zeros(config: NeuralTextureConfig) -> Result<Self, TextureError> {
        config.bounds.validate()?;
        if config.encoding.features == 0 || config.encoding.levels == 0 || config.hidden_width == 0 {
            return Err(TextureError::Shape("encoding and hidden width must be non-empty".into()));
        }
        let n = config.encoding.parameter_count()
            + config.hidden_width * config.encoding.output_dim()
            + PBR_CHANNELS * config.hidden_width;
        Ok(Self { config, params: vec![0.0; n] })
    }

    pub fn config(&self) -> &NeuralTextureConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn has_non_finite(&self) -> bool {
        self.params.iter().any(|p| !p.is_finite())
    }

    /// Parameter census: hash tables and exactly two weight matrices.
    pub fn parameter_groups(&self) -> Vec<ParameterGroup> {
        let e = &self.config.encoding;
        let (i, h) = (e.output_dim(), self.config.hidden_width);
        let t = e.parameter_count();
        vec![
            ParameterGroup {
                name: "hash_tables",
                offset: 0,
                len: t,
                shape: vec![e.levels, e.table_size(), e.features],
            },
            ParameterGroup { name: "mlp.layer1.weight", offset: t, len: h * i, shape: vec![h, i] },
            ParameterGroup {
                name: "mlp.layer2.weight",
                offset: t + h * i,
                len: PBR_CHANNELS * h,
                shape: vec![PBR_CHANNELS, h],
            },
        ]
    }

    fn w1_offset(&self) -> usize {
        self.config.encoding.parameter_count()
    }

    fn w2_offset(&self) -> usize {
        self.w1_offset() + self.config.hidden_width * self.config.encoding.output_dim()
    }

    pub fn evaluate(&self, p: Vec3) -> PbrSample {
        self.evaluate_into(p, &mut Workspace::default())
    }

    /// Forward pass keeping intermediates in `ws` for [`Self::backward`].
    pub fn evaluate_into(&self, p: Vec3, ws: &mut Workspace) -> PbrSample {
        let enc = &self.config.encoding;
        let (fdim, idim, h) = (enc.features, enc.output_dim(), self.config.hidden_width);
        enc.corners(p, &mut ws.corners);
        ws.encoded.clear();
        ws.encoded.resize(idim, 0.0);
        for (k, &(slot, w)) in ws.corners.iter().enumerate() {
            let level = k / 8;
            for f in 0..fdim {
                ws.encoded[level * fdim + f] += w * self.params[slot * fdim + f];
            }
        }
        let w1 = &self.params[self.w1_offset()..self.w2_offset()];
        ws.hidden_pre.clear();
        ws.hidden.clear();
        for row in w1.chunks_exact(idim) {
            let z: f64 = row.iter().zip(&ws.encoded).map(|(a, b)| a * b).sum();
            ws.hidden_pre.push(z);
            ws.hidden.push(self.config.activation.apply(z));
        }
        let w2 = &self.params[self.w2_offset()..];
        let mut out = [0.0; PBR_CHANNELS];
        for (c, row) in w2.chunks_exact(h).enumerate() {
            let z: f64 = row.iter().zip(&ws.hidden).map(|(a, b)| a * b).sum();
            let s = sigmoid(z);
            ws.sig[c] = s;
            let (lo, hi) = self.config.bounds.0[c];
            out[c] = (lo + (hi - lo) * s).clamp(lo, hi);
        }
        PbrSample::from_array(out)
    }

    /// Accumulates `d_out^T * d(output)/d(params)` for the evaluation stored
    /// in `ws`.
    pub fn backward<S: GradientSink + ?Sized>(&self, ws: &Workspace, d_out: &[f64; PBR_CHANNELS], grad: &mut S) {
        let enc = &self.config.encoding;
        let (fdim, idim, h) = (enc.features, enc.output_dim(), self.config.hidden_width);
        let (o1, o2) = (self.w1_offset(), self.w2_offset());
        let mut d_pre_out = [0.0; PBR_CHANNELS];
        for c in 0..PBR_CHANNELS {
            let (lo, hi) = self.config.bounds.0[c];
            let s = ws.sig[c];
            d_pre_out[c] = d_out[c] * (hi - lo) * s * (1.0 - s);
        }
        let mut d_hidden = vec![0.0; h];
        for c in 0..PBR_CHANNELS {
            if d_pre_out[c] == 0.0 {
                continue;
            }
            for j in 0..h {
                grad.add(o2 + c * h + j, d_pre_out[c] * ws.hidden[j]);
                d_hidden[j] += d_pre_out[c] * self.params[o2 + c * h + j];
            }
        }
        let mut d_enc = vec![0.0; idim];
        for j in 0..h {
            let dz = d_hidden[j] * self.config.activation.derivative(ws.hidden_pre[j]);
            if dz == 0.0 {
                continue;
            }
            for k in 0..idim {
                grad.add(o1 + j * idim + k, dz * ws.encoded[k]);
                d_enc[k] += dz * self.params[o1 + j * idim + k];
            }
        }
        for (k, &(slot, w)) in ws.corners.iter().enumerate() {
            let level = k / 8;
            for f in 0..fdim {
                let g = w * d_enc[level * fdim + f];
                if g != 0.0 {
                    grad.add(slot * fdim + f, g);
                }
            }
        }
    }

    /// Versioned little-endian blob: magic, version, JSON config, parameters.
    pub fn write_blob<W: Write>(&self, mut w: W) -> Result<(), TextureError> {
        let cfg = serde_json::to_vec(&self.config).map_err(|e| TextureError::Blob(e.to_string()))?;
        w.write_all(TEXTURE_MAGIC)?;
        w.write_all(&TEXTURE_BLOB_VERSION.to_le_bytes())?;
        w.write_all(&(cfg.len() as u32).to_le_bytes())?;
        w.write_all(&cfg)?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_blob<R: Read>(mut r: R) -> Result<Self, TextureError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != TEXTURE_MAGIC {
            return Err(TextureError::Blob("not a neural texture blob".into()));
        }
        let mut u32b = [0u8; 4];
        r.read_exact(&mut u32b)?;
        let version = u32::from_le_bytes(u32b);
        if version != TEXTURE_BLOB_VERSION {
            return Err(TextureError::Blob(format!("unsupported version {version}")));
        }
        r.read_exact(&mut u32b)?;
        let mut cfg = vec![0u8; u32::from_le_bytes(u32b) as usize];
        r.read_exact(&mut cfg)?;
        let config: NeuralTextureConfig =
            serde_json::from_slice(&cfg).map_err(|e| TextureError::Blob(e.to_string()))?;
        let mut tex = Self::zeros(config)?;
        let mut u64b = [0u8; 8];
        r.read_exact(&mut u64b)?;
        if u64::from_le_bytes(u64b) as usize != tex.params.len() {
            return Err(TextureError::Blob("parameter count does not match config".into()));
        }
        for p in tex.params.iter_mut() {
            r.read_exact(&mut u64b)?;
            *p = f64::from_le_bytes(u64b);
        }
        Ok(tex)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_blob(&mut out).expect("writing to a Vec cannot fail");
        out
    }
}
