use thiserror::Error;

/// Errors produced anywhere in the outpainting library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("index out of bounds: {0}")]
    Bounds(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("schedule error: {0}")]
    Schedule(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("coverage error: {0}")]
    Coverage(String),
    #[error("value error: {0}")]
    Value(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Tag an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// True for errors caused by bad configuration or usage rather than a runtime failure.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
