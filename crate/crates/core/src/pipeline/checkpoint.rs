//! Binary run checkpoints.
//!
//! Layout: magic `SFCK`, `u32` format version, 32-byte SHA-256 of the body,
//! `u64` body length, body. The body is a `u64`-prefixed JSON header
//! followed by three `u64`-prefixed little-endian `f64` arrays: parameters
//! and the two Adam moment vectors.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::neural_texture::NeuralTextureConfig;
use crate::optim::Adam;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"SFCK";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunKind {
    LightEstimation,
    TextureAdaptation,
    SceneAgnosticGeneration,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: RunKind,
    iteration: usize,
    total_iterations: usize,
    seed: u64,
    rng: RngState,
    adam_step: u64,
    adam_betas: (f64, f64),
    adam_eps: f64,
    texture_config: Option<NeuralTextureConfig>,
}

/// Optimizer state after `iteration` completed steps.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: RunKind,
    pub iteration: usize,
    pub total_iterations: usize,
    pub seed: u64,
    pub rng: RngState,
    pub params: Vec<f64>,
    pub adam: Adam,
    pub texture_config: Option<NeuralTextureConfig>,
}

fn push_array(out: &mut Vec<u8>, v: &[f64]) {
    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PipelineError> {
        if self.buf.len() < n {
            return Err(PipelineError::CheckpointCorrupt);
        }
        let (a, b) = self.buf.split_at(n);
        self.buf = b;
        Ok(a)
    }

    fn u64(&mut self) -> Result<u64, PipelineError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn array(&mut self) -> Result<Vec<f64>, PipelineError> {
        let n = self.u64()? as usize;
        let bytes = self.take(n.checked_mul(8).ok_or(PipelineError::CheckpointCorrupt)?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind,
            iteration: self.iteration,
            total_iterations: self.total_iterations,
            seed: self.seed,
            rng: self.rng,
            adam_step: self.adam.step_count,
            adam_betas: (self.adam.beta1, self.adam.beta2),
            adam_eps: self.adam.eps,
            texture_config: self.texture_config,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut body = Vec::with_capacity(32 + 24 * self.params.len() + json.len());
        body.extend_from_slice(&(json.len() as u64).to_le_bytes());
        body.extend_from_slice(&json);
        push_array(&mut body, &self.params);
        push_array(&mut body, &self.adam.m);
        push_array(&mut body, &self.adam.v);
        let mut out = Vec::with_capacity(body.len() + 48);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&Sha256::digest(&body));
        out.extend_from_slice(&(body.len() as u64).to_le_bytes());
        out.extend_from_slice(&body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PipelineError> {
        let mut r = Reader { buf: bytes };
        if r.take(4)? != MAGIC {
            return Err(PipelineError::CheckpointCorrupt);
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(PipelineError::CheckpointVersion { found: version, expected: CHECKPOINT_VERSION });
        }
        let digest = r.take(32)?.to_vec();
        let len = r.u64()? as usize;
        let body = r.take(len)?;
        if !r.buf.is_empty() || Sha256::digest(body).as_slice() != digest.as_slice() {
            return Err(PipelineError::CheckpointCorrupt);
        }
        let mut b = Reader { buf: body };
        let hlen = b.u64()? as usize;
        let header: Header = serde_json::from_slice(b.take(hlen)?).map_err(|_| PipelineError::CheckpointCorrupt)?;
        let params = b.array()?;
        let m = b.array()?;
        let v = b.array()?;
        if !b.buf.is_empty() || m.len() != params.len() || v.len() != params.len() {
            return Err(PipelineError::CheckpointCorrupt);
        }
        let adam = Adam {
            beta1: header.adam_betas.0,
            beta2: header.adam_betas.1,
            eps: header.adam_eps,
            m,
            v,
            step_count: header.adam_step,
        };
        Ok(Self {
            kind: header.kind,
            iteration: header.iteration,
            total_iterations: header.total_iterations,
            seed: header.seed,
            rng: header.rng,
            params,
            adam,
            texture_config: header.texture_config,
        })
    }

    /// Writes through a temporary file so an interrupted save never leaves
    /// a truncated checkpoint behind.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PipelineError> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Checks that this checkpoint can continue a run of `kind` with
    /// `n_params` parameters.
    pub fn check_compatible(&self, kind: RunKind, n_params: usize, total: usize) -> Result<(), PipelineError> {
        if self.kind != kind {
            return Err(PipelineError::CheckpointMismatch(format!("checkpoint is for {:?}, not {:?}", self.kind, kind)));
        }
        if self.params.len() != n_params {
            return Err(PipelineError::CheckpointMismatch(format!(
                "checkpoint has {} parameters, run has {n_params}",
                self.params.len()
            )));
        }
        if self.total_iterations != total || self.iteration > total {
            return Err(PipelineError::CheckpointMismatch(format!(
                "checkpoint at {}/{} does not fit a {total}-iteration run",
                self.iteration, self.total_iterations
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        rng.set_stream(3);
        let _: [u64; 5] = rng.gen();
        let mut adam = Adam::new(3);
        adam.step(&mut [1.0, 2.0, 3.0], &[0.1, -0.2, 0.3], 0.01);
        Checkpoint {
            kind: RunKind::LightEstimation,
            iteration: 5,
            total_iterations: 10,
            seed: 11,
            rng: RngState::capture(&rng),
            params: vec![1.5, -0.25, f64::MIN_POSITIVE],
            adam,
            texture_config: None,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), c.to_bytes());
    }

    #[test]
    fn rng_state_resumes_the_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let _: [u32; 7] = rng.gen();
        let mut copy = RngState::capture(&rng).restore();
        let a: [u64; 4] = rng.gen();
        let b: [u64; 4] = copy.gen();
        assert_eq!(a, b);
    }

    #[test]
    fn flipped_byte_is_detected() {
        let mut bytes = sample().to_bytes();
        let n = bytes.len();
        bytes[n - 3] ^= 0x10;
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap_err().to_string(), "checkpoint corrupt");
        assert_eq!(Checkpoint::from_bytes(&bytes[..20]).unwrap_err().to_string(), "checkpoint corrupt");
        assert_eq!(Checkpoint::from_bytes(b"nope").unwrap_err().to_string(), "checkpoint corrupt");
    }

    #[test]
    fn version_mismatch_is_refused() {
        let mut bytes = sample().to_bytes();
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, PipelineError::CheckpointVersion { found: 7, .. }));
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.ckpt");
        sample().save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), sample());
        let c = sample();
        assert!(c.check_compatible(RunKind::LightEstimation, 3, 10).is_ok());
        assert!(c.check_compatible(RunKind::TextureAdaptation, 3, 10).is_err());
        assert!(c.check_compatible(RunKind::LightEstimation, 4, 10).is_err());
    }
}
