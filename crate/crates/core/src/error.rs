use thiserror::Error;

use crate::session::SubsetLabel;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid amplitudes: {0}")]
    InvalidAmplitudes(String),

    #[error("state is not normalized (norm² = {0})")]
    NotNormalized(f64),

    #[error("invalid attack policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("subset {label} holds {available} sifted records but {required} test samples were requested")]
    InsufficientSamples {
        label: SubsetLabel,
        available: usize,
        required: usize,
    },

    #[error("no feasible epsilon: 2*sqrt(2m/N) = {required:.6} exceeds 1")]
    Infeasible { required: f64 },

    #[error("key length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("key of {length} bits is too short to remove {leaked} leaked + {margin} margin bits")]
    KeyTooShort {
        length: usize,
        leaked: usize,
        margin: usize,
    },

    #[error("malformed key encoding: {0}")]
    KeyEncoding(String),
}

pub type Result<T> = std::result::Result<T, Error>;
