use thiserror::Error;

/// Errors produced by the restoration library.
///
/// Variants follow the failure taxonomy used throughout the operation
/// contracts: sizing, shape, domain, numeric, configuration, validation,
/// and adapter (I/O or format) failures.
#[derive(Debug, Error)]
pub enum Error {
    /// An input is too short or has an unusable length.
    #[error("input size: {0}")]
    InputSize(String),

    /// Two inputs that must agree in length or grid do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A value is outside the mathematical domain of the operation.
    #[error("domain: {0}")]
    Domain(String),

    /// A non-finite value or numerical blow-up was detected.
    #[error("numeric failure in {stage}: {detail}")]
    Numeric { stage: String, detail: String },

    /// A configuration value is invalid on its own.
    #[error("configuration: {0}")]
    Config(String),

    /// One or more cross-field validation problems; all are listed.
    #[error("validation failed:\n{}", .0.join("\n"))]
    Validation(Vec<String>),

    /// File or format level failure.
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    /// Failure decoding or encoding an external format (WAV, CSV, TOML).
    #[error("format error in {context}: {detail}")]
    Format { context: String, detail: String },
}

impl Error {
    pub fn numeric(stage: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            stage: stage.into(),
            detail: detail.into(),
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn format(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
