use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("time ordering violated: t = {t} > T = {maturity}")]
    TimeOrder { t: f64, maturity: f64 },

    #[error("time {0} is not a node of the grid")]
    OffGrid(f64),

    #[error("intensity must be positive, got {value} at t = {t}")]
    NonPositiveIntensity { t: f64, value: f64 },

    #[error("intensity {value} at t = {t} lies outside the band [{lo}, {hi}]")]
    OutOfBand { t: f64, value: f64, lo: f64, hi: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("series price not available: {0}")]
    SeriesNotAvailable(String),
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_order(t: f64, maturity: f64) -> Result<()> {
    if !(t.is_finite() && maturity.is_finite()) {
        return Err(Error::NonFinite("time arguments".into()));
    }
    if t > maturity {
        return Err(Error::TimeOrder { t, maturity });
    }
    Ok(())
}
