use thiserror::Error;

use crate::format::DecodeError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("index {index:?} is outside grid dims {dims:?}")]
    IndexOutOfRange { index: [usize; 3], dims: [usize; 3] },

    #[error("label id {id} is not valid in the {space} label space")]
    InvalidLabel { id: u8, space: crate::LabelSpace },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("raw label id {0} has no entry in the label table")]
    UnmappedLabel(u32),

    #[error("non-finite coordinate in input: {0}")]
    NonFinite(String),

    #[error("undefined condition: {0}")]
    UndefinedCondition(String),

    #[error("infeasible geometry: {0}")]
    InfeasibleGeometry(String),

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("observation set is empty")]
    NoObservations,

    #[error(transparent)]
    Decode(#[from] DecodeError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}
