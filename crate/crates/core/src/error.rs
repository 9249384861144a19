use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Error taxonomy shared by every module.
///
/// `Domain` covers out-of-range queries (time outside the horizon, a point
/// not near the boundary, a missing avoidance family). `Numeric` covers
/// iterations that fail to certify their tolerance and carries the final
/// residual. `BlowUp` carries the last time at which the state was finite.
/// `Invalid` covers construction-time validation failures and names the
/// offending field.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numeric error: {message} (residual {residual:e})")]
    Numeric { message: String, residual: f64 },
    #[error("blow-up at t = {time}: state left the finite range")]
    BlowUp { time: f64 },
    #[error("invalid {what}: {reason}")]
    Invalid { what: String, reason: String },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn invalid(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what: what.into(),
            reason: reason.into(),
        }
    }
}
