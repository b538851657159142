use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("non-finite gradient: {0}")]
    Grad(String),
    #[error("insufficient events: need at least {needed}, found {found}")]
    InsufficientEvents { needed: usize, found: usize },
    #[error("undefined statistic: {0}")]
    Undefined(String),
    #[error("did not converge: {0}")]
    Convergence(String),
    #[error("value out of range: {0}")]
    Range(String),
    #[error("network has no edges: {0}")]
    EmptyNetwork(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
