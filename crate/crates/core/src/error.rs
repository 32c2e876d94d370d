use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing input file: {}", .0.display())]
    MissingInput(PathBuf),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: face with {count} vertices, only triangles are supported")]
    NonTriangleFace { line: usize, count: usize },

    #[error("invalid file format: {0}")]
    Format(String),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("vertex {0} has no neighbors")]
    IsolatedVertex(usize),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("mesh topology does not match the model")]
    TopologyMismatch,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("too few points: need at least {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("linear system is singular: {0}")]
    SingularSystem(String),

    #[error("face {0} is degenerate")]
    DegenerateTriangle(usize),

    #[error("degenerate region: {0}")]
    DegenerateRegion(String),

    #[error("normal is not unit length (|n| = {0})")]
    NonUnitNormal(f64),

    #[error("mesh has no texture coordinates")]
    MissingTexCoords,

    #[error("evaluation region is empty")]
    EmptyRegion,

    #[error("segmentation mask contains no face pixel")]
    EmptyFaceMask,

    #[error("{0}")]
    Validation(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 1 generic, 2 missing input, 3 validation, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingInput(_) => 2,
            Error::Parse { .. }
            | Error::NonTriangleFace { .. }
            | Error::Format(_)
            | Error::InvalidMesh(_)
            | Error::DimensionMismatch { .. }
            | Error::TopologyMismatch
            | Error::LengthMismatch { .. }
            | Error::TooFewPoints { .. }
            | Error::MissingTexCoords
            | Error::EmptyFaceMask
            | Error::NonUnitNormal(_)
            | Error::Validation(_) => 3,
            Error::IsolatedVertex(_)
            | Error::DegenerateConfiguration(_)
            | Error::SingularSystem(_)
            | Error::DegenerateTriangle(_)
            | Error::DegenerateRegion(_)
            | Error::EmptyRegion => 4,
            Error::Io { .. } | Error::Image(_) => 1,
        }
    }
}
