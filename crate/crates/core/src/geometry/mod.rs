//! Mesh ingestion, normalization and the orbit camera model.

mod camera;
mod mesh;
mod obj;
pub mod primitives;

pub use camera::{
    fov_from_multiplier, sample_cameras, Camera, CameraSampling, FovForm, Ray, DEFAULT_CAMERA_DISTANCE,
    DEFAULT_FOV_MULTIPLIER_RANGE,
};
pub use mesh::{compute_vertex_normals, normalize_mesh, TriangleMesh, NORMALIZED_RADIUS};
pub use obj::{load_mesh, parse_obj, write_obj};

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("mesh lacks UV parameterization")]
    MissingUvs,
    #[error("single-material mesh required")]
    MultipleMaterials,
    #[error("zero extent mesh")]
    ZeroExtent,
    #[error("no elevations")]
    NoElevations,
    #[error("empty mesh")]
    Empty,
    #[error("mesh UVs outside [0,1]^2: ({0}, {1})")]
    UvOutOfRange(f64, f64),
    #[error("face {face} references vertex {index} but mesh has {count} vertices")]
    IndexOutOfRange { face: usize, index: usize, count: usize },
    #[error("OBJ parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid camera sampling: {0}")]
    InvalidSampling(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
