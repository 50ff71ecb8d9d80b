use std::io;

/// Errors produced by the allocation library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{what} = {value} is outside the function's domain")]
    Domain { what: &'static str, value: f64 },

    #[error("invalid parameter {field}: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("degenerate channel: SINR denominator is {denominator}")]
    DegenerateChannel { denominator: f64 },

    #[error("upper bracket exceeded {limit} while solving for price {price}")]
    BracketOverflow { price: f64, limit: f64 },

    #[error("sum of bids is zero with a positive power budget")]
    DegenerateBids,

    #[error("closed form is singular (denominator {denominator})")]
    Singularity { denominator: f64 },

    #[error("malformed message: {0}")]
    Parse(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("duplicate bid from user {user_id} for round {round}")]
    DuplicateBid { user_id: usize, round: u64 },

    #[error("timed out waiting for {missing} bid(s) in round {round}")]
    Timeout { round: u64, missing: usize },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
