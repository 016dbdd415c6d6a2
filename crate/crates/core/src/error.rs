use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid harmonic index (l={l}, m={m})")]
    InvalidIndex { l: i64, m: i64 },

    #[error("colatitude {theta} is inside the polar cutoff of {cutoff} rad")]
    PolarCutoff { theta: f64, cutoff: f64 },

    #[error("band limit mismatch: {0}")]
    BandLimit(String),

    #[error("map has {0} masked pixels; use the masked-sky estimators")]
    MaskedInput(usize),

    #[error("every pixel is masked")]
    FullyMasked,

    #[error("degenerate statistic: {0}")]
    Degenerate(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(String),

    #[error("simulation {index} failed: {source}")]
    Simulation {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
