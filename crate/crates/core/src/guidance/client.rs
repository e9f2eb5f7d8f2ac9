//! Blocking HTTP client for the score service.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{GradientImage, GuidanceContext, GuidanceError, GuidanceMode, Injection, ScoreProvider, ViewRequest};
use crate::image::{GrayImage, RgbImage};
use crate::io::{decode_exr, encode_exr, encode_mask_png};

pub const PROTOCOL_HEADER: &str = "x-sf-proto";
pub const PROTOCOL_VERSION: &str = "1";
/// Run identifier for service-side adapter state.
pub const RUN_HEADER: &str = "x-sf-run";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub request_id: String,
    pub image: String,
    pub mode: GuidanceMode,
    pub prompt: String,
    pub negative_prompt: String,
    pub t_min: u32,
    pub t_max: u32,
    pub cfg_scale: f64,
    pub lambda: f64,
    pub injection: Injection,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reference_image: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub inpaint_mask: Option<String>,
    pub class_embedding: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub request_id: String,
    pub gradient: String,
    pub t: f64,
    pub alpha_t: f64,
    pub w_t: f64,
}

#[derive(Serialize)]
struct LoraStep<'a> {
    request_id: &'a str,
}

impl ScoreRequest {
    /// Encodes images as base64 EXR and the mask (alpha > 0.5) as a 1-bit PNG.
    pub fn build(
        request_id: String,
        image: &RgbImage,
        ctx: &GuidanceContext,
        reference: Option<&RgbImage>,
        mask: Option<&GrayImage>,
    ) -> Result<Self, GuidanceError> {
        ctx.validate()?;
        if ctx.mode == GuidanceMode::GlobalInpaint && mask.is_none() {
            return Err(GuidanceError::InvalidContext("global-inpaint mode needs a mask".into()));
        }
        if let Some(m) = mask {
            if !m.same_shape(image) {
                return Err(GuidanceError::Shape("mask and image differ in size".into()));
            }
        }
        let reference_image = reference.map(|r| encode_exr(r).map(|b| B64.encode(b))).transpose()?;
        let inpaint_mask = mask
            .map(|m| {
                let bits: Vec<bool> = m.pixels().iter().map(|&a| a > 0.5).collect();
                encode_mask_png(&bits, m.width(), m.height()).map(|b| B64.encode(b))
            })
            .transpose()?;
        Ok(Self {
            request_id,
            image: B64.encode(encode_exr(image)?),
            mode: ctx.mode,
            prompt: ctx.prompt.clone(),
            negative_prompt: ctx.negative_prompt.clone(),
            t_min: ctx.t_range.0,
            t_max: ctx.t_range.1,
            cfg_scale: ctx.cfg_scale,
            lambda: ctx.lambda,
            injection: ctx.injection,
            reference_image,
            inpaint_mask,
            class_embedding: ctx.class_embedding.clone(),
        })
    }
}

impl ScoreResponse {
    pub fn decode(&self, width: usize, height: usize) -> Result<GradientImage, GuidanceError> {
        let bytes = B64
            .decode(self.gradient.as_bytes())
            .map_err(|e| GuidanceError::Protocol(format!("gradient payload is not base64: {e}")))?;
        let gradient = decode_exr(&bytes)?;
        if gradient.dimensions() != (width, height) {
            return Err(GuidanceError::Shape(format!(
                "service returned {:?}, expected {:?}",
                gradient.dimensions(),
                (width, height)
            )));
        }
        let out = GradientImage { gradient, t: self.t, alpha_t: self.alpha_t, w_t: self.w_t };
        if !out.is_finite() {
            return Err(GuidanceError::Protocol("non-finite gradient".into()));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub url: String,
    pub run_id: String,
    pub timeout_ms: u64,
    /// Attempts after the first one.
    pub retries: u32,
    /// First backoff; doubled after every failed attempt.
    pub backoff_ms: u64,
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self { url: url.into(), run_id: "run".into(), timeout_ms: 120_000, retries: 3, backoff_ms: 500 }
    }
}

enum Failure {
    Retry(String),
    Fatal(GuidanceError),
}

pub struct RemoteClient {
    config: RemoteConfig,
    http: reqwest::blocking::Client,
    counter: AtomicU64,
}

impl RemoteClient {
    pub fn new(config: RemoteConfig) -> Result<Self, GuidanceError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| GuidanceError::Protocol(e.to_string()))?;
        Ok(Self { config, http, counter: AtomicU64::new(0) })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn next_id(&self) -> String {
        format!("{}-{:08}", self.config.run_id, self.counter.fetch_add(1, Ordering::Relaxed))
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}{}", self.config.url.trim_end_matches('/'), path)
    }

    fn attempt(&self, path: &str, body: Option<&[u8]>) -> Result<Vec<u8>, Failure> {
        let url = self.endpoint(path);
        let req = match body {
            Some(b) => self.http.post(&url).header("content-type", "application/json").body(b.to_vec()),
            None => self.http.get(&url),
        };
        let resp = req
            .header(PROTOCOL_HEADER, PROTOCOL_VERSION)
            .header(RUN_HEADER, &self.config.run_id)
            .send()
            .map_err(|e| Failure::Retry(e.to_string()))?;
        let status = resp.status();
        let version = resp.headers().get(PROTOCOL_HEADER).and_then(|v| v.to_str().ok()).map(str::to_owned);
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Failure::Retry(format!("{url}: HTTP {status}")));
        }
        match version.as_deref() {
            Some(PROTOCOL_VERSION) => {}
            other => {
                return Err(Failure::Fatal(GuidanceError::ProtocolVersion {
                    expected: PROTOCOL_VERSION.into(),
                    found: other.unwrap_or("none").into(),
                }))
            }
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(Failure::Fatal(GuidanceError::Protocol(format!("{url}: HTTP {status}: {text}"))));
        }
        resp.bytes().map(|b| b.to_vec()).map_err(|e| Failure::Retry(e.to_string()))
    }

    fn call(&self, path: &str, body: Option<&[u8]>) -> Result<Vec<u8>, GuidanceError> {
        let attempts = self.config.retries + 1;
        let mut wait = Duration::from_millis(self.config.backoff_ms);
        let mut last = String::new();
        for i in 0..attempts {
            match self.attempt(path, body) {
                Ok(b) => return Ok(b),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(msg)) => {
                    log::warn!("score service attempt {}/{attempts} failed: {msg}", i + 1);
                    last = msg;
                    if i + 1 < attempts {
                        std::thread::sleep(wait);
                        wait *= 2;
                    }
                }
            }
        }
        Err(GuidanceError::Unavailable { attempts, last })
    }

    pub fn health(&self) -> Result<(), GuidanceError> {
        self.call("/v1/health", None).map(|_| ())
    }

    pub fn score_request(&self, req: &ScoreRequest, width: usize, height: usize) -> Result<GradientImage, GuidanceError> {
        let body = serde_json::to_vec(req).map_err(|e| GuidanceError::Protocol(e.to_string()))?;
        let bytes = self.call("/v1/score", Some(&body))?;
        let resp: ScoreResponse =
            serde_json::from_slice(&bytes).map_err(|e| GuidanceError::Protocol(format!("malformed response: {e}")))?;
        if resp.request_id != req.request_id {
            return Err(GuidanceError::Protocol(format!(
                "response id {} does not match request {}",
                resp.request_id, req.request_id
            )));
        }
        resp.decode(width, height)
    }

    pub fn score(
        &self,
        image: &RgbImage,
        ctx: &GuidanceContext,
        reference: Option<&RgbImage>,
        mask: Option<&GrayImage>,
    ) -> Result<GradientImage, GuidanceError> {
        let req = ScoreRequest::build(self.next_id(), image, ctx, reference, mask)?;
        self.score_request(&req, image.width(), image.height())
    }

    pub fn lora_step(&self) -> Result<(), GuidanceError> {
        let id = self.next_id();
        let body = serde_json::to_vec(&LoraStep { request_id: &id }).map_err(|e| GuidanceError::Protocol(e.to_string()))?;
        self.call("/v1/lora-step", Some(&body)).map(|_| ())
    }
}

impl ScoreProvider for RemoteClient {
    fn score(&self, req: &ViewRequest<'_>) -> Result<GradientImage, GuidanceError> {
        RemoteClient::score(self, req.image, req.ctx, req.reference, req.mask)
    }

    fn end_step(&self) -> Result<(), GuidanceError> {
        self.lora_step()
    }

    fn is_remote(&self) -> bool {
        true
    }
}
