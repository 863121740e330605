use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("zero-norm input")]
    ZeroNorm,

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate record id {0:?}")]
    DuplicateId(String),

    #[error("line {line}: missing image for record {id:?}")]
    MissingImage { line: usize, id: String },

    #[error("record {0:?} not found in corpus")]
    MissingRecord(String),

    #[error("empty class {0}")]
    EmptyClass(String),

    #[error("class {class:?} has {available} items, {requested} requested")]
    InsufficientItems {
        class: String,
        available: usize,
        requested: usize,
    },

    #[error("unknown organ {0:?}")]
    UnknownOrgan(String),

    #[error("embedding is not unit-norm (norm {0})")]
    NonUnit(f64),

    #[error("LoRA rank {rank} exceeds min(d_in, d_out) = {limit}")]
    RankTooLarge { rank: usize, limit: usize },

    #[error("LoRA overlay already injected")]
    DoubleInjection,

    #[error("class {0:?}: averaged prompt embedding has zero norm")]
    ZeroClassEmbedding(String),

    #[error("kappa undefined: zero expected disagreement with nonzero observed disagreement")]
    DegenerateKappa,

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("all hyperparameter probes diverged; grid: {0}")]
    AllProbesDiverged(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
