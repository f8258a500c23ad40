use std::io;

use thiserror::Error;

/// Unified error type for the whole engine.
///
/// Every fallible operation names enough context to locate the failure
/// without a debugger: shape errors carry the operation, numeric errors
/// carry the quantity that went bad, pipeline errors carry the stage.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: {details}")]
    Shape {
        context: &'static str,
        details: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numeric failure in {context}: {details}")]
    Numeric {
        context: &'static str,
        details: String,
    },

    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("frame {index} failed: {source}")]
    Frame {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on '{path}': {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error("malformed file '{path}': {details}")]
    Format { path: String, details: String },
}

impl Error {
    pub fn shape(context: &'static str, details: impl Into<String>) -> Self {
        Error::Shape {
            context,
            details: details.into(),
        }
    }

    pub fn config(details: impl Into<String>) -> Self {
        Error::Config(details.into())
    }

    pub fn numeric(context: &'static str, details: impl Into<String>) -> Self {
        Error::Numeric {
            context,
            details: details.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<String>, details: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            details: details.into(),
        }
    }

    /// Wraps an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Wraps an error with the video frame it occurred on.
    pub fn in_frame(self, index: usize) -> Self {
        Error::Frame {
            index,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
