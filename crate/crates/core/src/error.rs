use thiserror::Error;

#[derive(Debug, Error)]
pub enum SaptError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("split discipline violation: {0}")]
    SplitDiscipline(String),

    #[error("dependency error: {0}")]
    Dependency(String),

    #[error("undefined gain: baseline accuracy is zero")]
    UndefinedGain,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, SaptError>;
