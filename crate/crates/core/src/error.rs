use thiserror::Error;

/// Every failure the library can report. Variant names double as the stable
/// error identifiers printed by the command-line tool.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point has non-positive depth")]
    NonPositiveDepth,
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("estimated scale is not positive ({0})")]
    NonPositiveScale(f64),
    #[error("invalid rotation matrix: {0}")]
    InvalidRotation(String),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("non-finite coordinate in point cloud")]
    NonFinite,
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("nothing rendered in front of the camera")]
    EmptyRender,
    #[error("template and observation share no visible surface")]
    NoCovisibleSurface,
    #[error("no template produced any match")]
    AllEmpty,
    #[error("too few correspondences: {found} (need {needed})")]
    TooFewCorrespondences { found: usize, needed: usize },
    #[error("RANSAC found no consensus set of at least 4 inliers")]
    NoConsensus,
    #[error("insufficient overlap between render and observation: {0} paired pixels")]
    InsufficientOverlap(usize),
    #[error("no pose hypothesis could be generated")]
    NoHypothesis,
    #[error("empty model point set")]
    EmptyModel,
    #[error("model point projects behind the camera")]
    BehindCamera,
    #[error("object placement failed after {0} rejections")]
    PlacementFailed(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short identifier of the variant, e.g. `"NoConsensus"`.
    pub fn name(&self) -> &'static str {
        match self {
            Error::NonPositiveDepth => "NonPositiveDepth",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::NonPositiveScale(_) => "NonPositiveScale",
            Error::InvalidRotation(_) => "InvalidRotation",
            Error::InvalidIntrinsics(_) => "InvalidIntrinsics",
            Error::NonFinite => "NonFinite",
            Error::InvalidMesh(_) => "InvalidMesh",
            Error::EmptyRender => "EmptyRender",
            Error::NoCovisibleSurface => "NoCovisibleSurface",
            Error::AllEmpty => "AllEmpty",
            Error::TooFewCorrespondences { .. } => "TooFewCorrespondences",
            Error::NoConsensus => "NoConsensus",
            Error::InsufficientOverlap(_) => "InsufficientOverlap",
            Error::NoHypothesis => "NoHypothesis",
            Error::EmptyModel => "EmptyModel",
            Error::BehindCamera => "BehindCamera",
            Error::PlacementFailed(_) => "PlacementFailed",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Format(_) => "Format",
            Error::Io(_) => "IoFailure",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        match e {
            image::ImageError::IoError(io) => Error::Io(io),
            other => Error::Format(other.to_string()),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
