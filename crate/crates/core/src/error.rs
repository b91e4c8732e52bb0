use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// A non-finite value appeared inside an invertible block.
    #[error("non-finite value in {stage} at block {block}")]
    Numeric { stage: &'static str, block: usize },

    /// A loss component evaluated to NaN or infinity; training halts.
    #[error("non-finite loss component `{component}`")]
    NonFiniteLoss { component: &'static str },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[cfg(feature = "nn")]
    #[error(transparent)]
    Candle(#[from] candle_core::Error),

    #[cfg(feature = "cli")]
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
