use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("asymmetric topology: distances[{i}][{j}] = {a} but distances[{j}][{i}] = {b}")]
    AsymmetricTopology { i: usize, j: usize, a: f64, b: f64 },
    #[error("invalid distance at ({i}, {j}): {value}")]
    InvalidDistance { i: usize, j: usize, value: f64 },
    #[error("negative flow {value} at ({origin}, {dest})")]
    NegativeFlow {
        origin: usize,
        dest: usize,
        value: f64,
    },
    #[error("NaN in observed feature column {feature} at region {region}")]
    NanInObserved { region: usize, feature: usize },
    #[error("observed pair ({origin}, {dest}) out of range for {n} regions")]
    PairOutOfRange { origin: usize, dest: usize, n: usize },
    #[error("duplicate region id {0:?}")]
    DuplicateRegion(String),
    #[error("a city needs at least 2 regions, found {0}")]
    TooFewRegions(usize),
    #[error("no observed feature columns")]
    NoObservedFeatures,
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("nonzero diagonal at node {0}")]
    NonzeroDiagonal(usize),
    #[error("adjacency contains a directed cycle")]
    Cyclic,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("training diverged in {stage}: {detail}")]
    Diverged { stage: &'static str, detail: String },
    #[error("observed feature set mismatch: {0}")]
    ObservedSetMismatch(String),
    #[error("missing artifacts: {}", .0.join(", "))]
    MissingArtifacts(Vec<String>),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("parse error in {path}: {detail}")]
    Parse { path: String, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
