//! Small 3D convolutional encoder with a projector head.

mod config;
mod encoder;
pub mod layers;
mod params;

pub use config::EncoderConfig;
pub use encoder::{BasisSet, Embedding, Encoder, FeatureMap, ForwardCache};
pub use params::{Param, Params};

use thiserror::Error;

use crate::volume::Shape3;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("input shape {found:?} does not match the encoder input shape {expected:?}")]
    ShapeMismatch { expected: Shape3, found: Shape3 },
    #[error("vector of length {found} where {expected} was expected")]
    LengthMismatch { expected: usize, found: usize },
    #[error("parameter layout mismatch: {0}")]
    ParamLayout(String),
}
