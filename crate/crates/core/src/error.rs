use thiserror::Error;

#[derive(Debug, Error)]
pub enum HiveError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error(
        "no hidden variables detected (selected K = 0); \
         enable `allow_no_hidden` to fall back to plain group-lasso"
    )]
    NoHiddenVariables,
}

pub type Result<T> = std::result::Result<T, HiveError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(HiveError::InvalidArgument(msg.into()))
}

pub(crate) fn shape<T>(msg: impl Into<String>) -> Result<T> {
    Err(HiveError::Shape(msg.into()))
}
