use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{what} = {value} is outside its domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("{method} did not converge within {iterations} iterations (residual {residual:e})")]
    Convergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_unit<S: crate::Real>(what: &'static str, x: S) -> Result<()> {
    if x >= S::zero() && x <= S::one() {
        Ok(())
    } else {
        Err(Error::Domain {
            what,
            value: x.as_f64(),
            domain: "[0, 1]",
        })
    }
}
