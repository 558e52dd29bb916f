use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("time {t} lies outside the domain [{start}, {end}]")]
    OutsideDomain { t: f64, start: f64, end: f64 },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error(
        "penalized system is singular or ill-conditioned (condition estimate {condition:.3e}) at rho = {rho}, theta = {theta:?}"
    )]
    SingularSystem {
        rho: f64,
        theta: Vec<f64>,
        condition: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("state became non-finite at t = {t}")]
    Divergence { t: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error at line {line}: {message}")]
    Data { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}
