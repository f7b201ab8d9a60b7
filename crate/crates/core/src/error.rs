use thiserror::Error;

/// Errors produced while building or validating engine inputs.
#[derive(Debug, Error)]
pub enum Error {
    /// Configuration failed validation; every problem found is listed.
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    /// A sequence length or photon cutoff exceeded the configured capacity guard.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// A measurement table could not be parsed.
    #[error("table parse error in {file} at row {row}, column {col}: {msg}")]
    TableParse {
        file: String,
        row: usize,
        col: usize,
        msg: String,
    },

    /// Table data is inconsistent with the protocol configuration.
    #[error("table/configuration mismatch: {0}")]
    TableMismatch(String),

    /// Measured data is physically impossible (e.g. negative intensity).
    #[error("data error: {0}")]
    Data(String),

    /// A required fine-grained epsilon entry is missing.
    #[error("missing fine-grained epsilon entry: {0}")]
    MissingEpsilon(String),

    /// A closed-form expression left its domain (radicand <= 0 or similar).
    #[error("domain error: {0}")]
    Domain(String),

    /// Linear-program construction produced a non-finite coefficient.
    #[error("LP construction error: {0}")]
    LpBuild(String),

    /// Numerical search failed (flat sensitivity curve, evaluation failure).
    #[error("search error: {0}")]
    Search(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
