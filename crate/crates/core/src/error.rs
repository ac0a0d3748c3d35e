use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("image data length {found} does not match {width}x{height}")]
    BadImageData { width: usize, height: usize, found: usize },
    #[error("invalid bounding box: {0}")]
    InvalidBox(&'static str),
    #[error("shape needs at least 3 landmarks, got {0}")]
    DegenerateShape(usize),
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("training shape {index} has {found} landmarks, expected {expected}")]
    InconsistentLandmarkCount {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid SM table id {0}")]
    InvalidTableId(usize),
    #[error("training set contains a single class")]
    SingleClassDataset,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("resolution mismatch: expected {expected:?}, found {found:?}")]
    ResolutionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("child class counts do not add up to the parent counts")]
    CountMismatch,
    #[error("initial point violates the bounds at coordinate {0}")]
    InfeasibleInit(usize),
    #[error("bounding box centre lies outside the image")]
    BoxOutsideImage,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("bad key landmark indices")]
    BadKeyIndices,
    #[error("zero variance")]
    ZeroVariance,
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}
