use std::fmt;
use std::path::PathBuf;

/// Where in an input file a parse failure happened.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    /// 1-based line number in a text file.
    Line(usize),
    /// Byte offset into a binary payload.
    Byte(u64),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(n) => write!(f, "line {n}"),
            Location::Byte(n) => write!(f, "byte offset {n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    InvalidNumber(String),
    WrongArity { expected: usize, found: usize },
    Truncated,
    Header(String),
    Json(String),
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::InvalidNumber(tok) => write!(f, "invalid number {tok:?}"),
            ParseErrorKind::WrongArity { expected, found } => {
                write!(f, "wrong arity: expected {expected} fields, found {found}")
            }
            ParseErrorKind::Truncated => write!(f, "unexpected end of data"),
            ParseErrorKind::Header(msg) => write!(f, "bad header: {msg}"),
            ParseErrorKind::Json(msg) => write!(f, "malformed json: {msg}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("rotation angle {angle} rad is too close to pi for a stable logarithm")]
    AngleNearPi { angle: f64 },
    #[error("rotation axis is not unit length (norm {norm})")]
    NonUnitAxis { norm: f64 },
    #[error("voxel resolution must be positive, got {0}")]
    NonPositiveResolution(f64),
    #[error("correspondence set is empty")]
    EmptyCorrespondences,
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewCorrespondences { needed: usize, got: usize },
    #[error("edge between nodes {i} and {j} has zero length")]
    DegenerateEdge { i: usize, j: usize },
    #[error("no node has a feasible rotation interval")]
    NoFeasibleNode,
    #[error("consensus set has {0} correspondences, at least 3 are required")]
    ConsensusTooSmall(usize),
    #[error("normal matrix is rank deficient (condition number {condition:e})")]
    RankDeficient { condition: f64 },
    #[error("value {0} is outside the domain (0, 1]")]
    DomainError(f64),
    #[error("no correspondence survived inlier refinement")]
    EmptyInliers,
    #[error("smallest eigenvalue is repeated (gap {gap:e}), gradient undefined")]
    RepeatedEigenvalue { gap: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{}: parse error at {location}: {kind}", path.display())]
    Parse {
        path: PathBuf,
        location: Location,
        kind: ParseErrorKind,
    },
    #[error("{}: unsupported format {format:?}", path.display())]
    UnsupportedFormat { path: PathBuf, format: String },
    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),
    #[error("matrix is not a rigid transform: {0}")]
    NonRigidMatrix(String),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Tags an error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
