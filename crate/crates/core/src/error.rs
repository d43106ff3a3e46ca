use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("frame mismatch: expected `{expected}`, got `{found}`")]
    FrameMismatch { expected: String, found: String },
    #[error("point is behind the camera (depth {depth_mm} mm)")]
    BehindCamera { depth_mm: f64 },
    #[error("zero-length vector")]
    ZeroVector,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("observations refer to different markers: `{0}` vs `{1}`")]
    MarkerMismatch(String, String),
    #[error("marker is outside the RGBD field of view")]
    MarkerOutOfView,
    #[error("phantom primitive out of bounds: {0}")]
    SpecOutOfBounds(String),
    #[error("bad angle range: {0}")]
    BadRange(String),
    #[error("mesh resolution {0} is below the minimum of 8")]
    BadResolution(usize),
    #[error("axis is parallel to the anterior direction; inclination is undefined")]
    GimbalDegenerate,
    #[error("angle out of range: {0}")]
    AngleOutOfRange(String),
    #[error("silhouette threshold selected no vertices")]
    EmptyContour,
    #[error("baseline is too short to define epipolar geometry")]
    DegenerateBaseline,
    #[error("rays are parallel")]
    ParallelRays,
    #[error("session is committed")]
    SessionCommitted,
    #[error("rotation is locked while an orientation preset is active")]
    RotationLocked,
    #[error("session has no ground truth")]
    NoGroundTruth,
    #[error("no surface visible to the sensor")]
    NothingVisible,
    #[error("point cloud grids differ")]
    GridMismatch,
    #[error("too few points: {0}")]
    TooFewPoints(usize),
    #[error("point distribution has no dominant axis")]
    IllConditioned,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
