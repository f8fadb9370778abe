use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// Hours are reported 1-based.
    #[error("hour {hour}: {distinct} distinct prices cannot populate {states} states")]
    InsufficientData {
        hour: usize,
        distinct: usize,
        states: usize,
    },

    /// Days and hours are reported 1-based.
    #[error("price {value} on day {day}, hour {hour} lies outside every grid interval")]
    UnmappablePrice { day: usize, hour: usize, value: f64 },

    #[error("price {value} at hour {hour} is not positive")]
    NonPositivePrice { hour: usize, value: f64 },

    #[error("energy feasible set is empty: initial SOC {initial} outside [{min}, {max}]")]
    InfeasibleStorage { initial: f64, min: f64, max: f64 },

    #[error("greedy oracle failed: {0}")]
    Greedy(String),

    #[error("scenario {scenario}: {source}")]
    Scenario {
        scenario: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("instance too large for the reference oracle ({size} > {limit}); use the projected subgradient solver")]
    TooLarge { size: usize, limit: usize },

    #[error("reference LP terminated as {0}")]
    Lp(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn in_scenario(self, scenario: usize) -> Self {
        Error::Scenario {
            scenario,
            source: Box::new(self),
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
