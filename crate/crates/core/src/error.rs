use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("index out of range: {what} = {index}, limit {limit}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("size cap exceeded: {what} needs {needed}, cap is {cap}")]
    SizeCap {
        what: &'static str,
        needed: u128,
        cap: u128,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("pixel ({u}, {v}) is not covered by any tile")]
    Coverage { u: usize, v: usize },

    #[error("recovered volume has imaginary residue {0:e}")]
    ImaginaryResidue(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short stable tag for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::IndexOutOfRange { .. } => "index",
            Error::SizeCap { .. } => "size_cap",
            Error::InvalidConfig(_) => "config",
            Error::Format(_) => "format",
            Error::Coverage { .. } => "coverage",
            Error::ImaginaryResidue(_) => "imaginary_residue",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
