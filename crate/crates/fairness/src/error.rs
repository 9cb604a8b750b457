use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("profile {label} is missing grid point ({c}, {h})")]
    IncompleteGrid { label: String, c: f64, h: f64 },

    #[error("{tenants} tenants cannot each hold a unit of a {units}-unit grid")]
    TooManyTenants { tenants: usize, units: u32 },

    #[error("scan piece {0} failed: {1}")]
    PieceFailed(usize, String),

    #[error("scan piece {0} missing")]
    PieceMissing(usize),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
