//! Differentiable rendering, single-image light estimation and compositing
//! for inserting a textured mesh into a 2D scene image.
//!
//! The crate is organized bottom-up:
//!
//! * [`geometry`]: OBJ ingestion, normalization and the orbit camera model.
//! * [`neural_texture`]: hash-encoded, bias-free MLP producing PBR channels.
//! * [`renderer`]: direct-lighting Monte Carlo renderer with parameter gradients.
//! * [`lighting`]: LDR environment construction, light regions and HDR scales.
//! * [`compositor`]: shadow mattes and alpha blending into the scene.
//! * [`guidance`]: score assembly, prompts, the photometric oracle and the
//!   remote score-service client.
//! * [`pipeline`]: the optimization drivers, schedules and checkpoints.

pub mod compositor;
pub mod geometry;
pub mod guidance;
pub mod image;
pub mod io;
pub mod lighting;
pub mod math;
pub mod neural_texture;
pub mod optim;
pub mod pipeline;
pub mod renderer;

mod error;

pub use error::{Error, Result};
