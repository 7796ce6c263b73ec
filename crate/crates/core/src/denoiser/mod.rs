//! Spatio-temporal transformer noise predictors (series and parallel).

mod config;
mod encoding;
mod layers;
mod model;

use thiserror::Error;

use crate::numerics::NumericsError;

pub use config::{DenoiserConfig, Variant};
pub use encoding::{assemble_input, positional_encoding, token_encoding};
pub use layers::{encoder_layer, spatial_attention_layer, temporal_attention_layer, temporal_attention_weights};
pub use model::{DenoiserModel, InitOptions};

#[derive(Debug, Error)]
pub enum DenoiserError {
    #[error("config error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[cfg(test)]
mod tests;
