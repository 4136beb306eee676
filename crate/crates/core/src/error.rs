use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum Error {
    #[error("no records")]
    NoRecords,

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("member index {index} out of range 1..={members}")]
    MemberOutOfRange { index: usize, members: usize },

    #[error("no local data at v = {v}: effective events {effective_events:.3} below {required}")]
    NoLocalData {
        v: f64,
        effective_events: f64,
        required: f64,
    },

    #[error("Hessian numerically singular at v = {v}")]
    SingularHessian { v: f64 },

    #[error("Newton iterations did not converge at v = {v}")]
    NonConvergence { v: f64 },

    #[error("A-hat numerically singular")]
    SingularAHat,

    #[error("weight covariance singular after regularization")]
    SingularSigma,

    #[error("no grid point could be fitted")]
    EmptyCurve,

    #[error("coefficient curve unavailable at V = {v}: {record}")]
    CurveUnavailable { v: f64, record: String },

    #[error("no available points")]
    NoAvailablePoints,

    #[error("unknown format `{0}`")]
    UnknownFormat(String),

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// True for failures that come from the numerics rather than the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoLocalData { .. }
                | Error::SingularHessian { .. }
                | Error::NonConvergence { .. }
                | Error::SingularAHat
                | Error::SingularSigma
                | Error::EmptyCurve
                | Error::CurveUnavailable { .. }
                | Error::NoAvailablePoints
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
