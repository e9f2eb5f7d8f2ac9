pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Texture(#[from] crate::neural_texture::TextureError),
    #[error(transparent)]
    Render(#[from] crate::renderer::RenderError),
    #[error(transparent)]
    Lighting(#[from] crate::lighting::LightingError),
    #[error(transparent)]
    Composite(#[from] crate::compositor::CompositeError),
    #[error(transparent)]
    Guidance(#[from] crate::guidance::GuidanceError),
    #[error(transparent)]
    Pipeline(#[from] crate::pipeline::PipelineError),
    #[error(transparent)]
    Io(#[from] crate::io::IoError),
}

impl Error {
    /// Short tag for command-line error reports.
    pub fn category(&self) -> &'static str {
        use crate::pipeline::PipelineError as P;
        match self {
            Error::Geometry(_) => "geometry",
            Error::Texture(_) => "texture",
            Error::Render(_) => "render",
            Error::Lighting(_) => "lighting",
            Error::Composite(_) => "composite",
            Error::Guidance(_) => "guidance",
            Error::Io(_) => "io",
            Error::Pipeline(p) => match p {
                P::Render(_) => "render",
                P::Guidance(_) => "guidance",
                P::Composite(_) => "composite",
                P::Lighting(_) => "lighting",
                P::Texture(_) => "texture",
                P::Config(_) => "config",
                P::Io(_) => "io",
                P::CheckpointCorrupt | P::CheckpointVersion { .. } | P::CheckpointMismatch(_) => "checkpoint",
                P::NonFinite { .. } => "diverged",
            },
        }
    }
}
