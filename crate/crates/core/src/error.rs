use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is numerically rank deficient (smallest/largest singular value = {ratio:e})")]
    RankDeficient { ratio: f64 },

    #[error("pair is numerically singular for this measure (|det| = {det:e})")]
    SingularPair { det: f64 },

    #[error("triangular factor R is singular")]
    SingularR,

    #[error("basis is not orthonormal (||XᵀX - I||_F = {error:e})")]
    NotOrthonormal { error: f64 },

    #[error("class {class} has a single member")]
    DegenerateClass { class: usize },

    #[error("invalid neighbor count: {0}")]
    InvalidK(String),

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid options: {0}")]
    InvalidOptions(String),

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("pair ({i}, {j}): {source}")]
    Pair {
        i: usize,
        j: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{skipped} of {weighted} weighted pairs skipped as singular (limit 1%)")]
    TooManySingularPairs { skipped: usize, weighted: usize },

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn at_sample(self, index: usize) -> Self {
        Error::Sample {
            index,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_pair(self, i: usize, j: usize) -> Self {
        Error::Pair {
            i,
            j,
            source: Box::new(self),
        }
    }

    /// Innermost error, with sample/pair context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Sample { source, .. } | Error::Pair { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures caused by the numbers rather than by the inputs' shape or the filesystem.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::RankDeficient { .. }
                | Error::SingularPair { .. }
                | Error::SingularR
                | Error::TooManySingularPairs { .. }
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self.root(), Error::Io { .. } | Error::Parse { .. })
    }
}
