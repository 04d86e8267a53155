//! Hierarchical recurrent neural encoder (HRNE) for video captioning.
//!
//! A two-level LSTM encoder summarizes short frame chunks with a shared LSTM
//! filter and models the chunk sequence with a second LSTM. An LSTM decoder
//! with a maxout deep output layer generates captions. Optional soft attention
//! can be inserted before the filter, before the second layer, and between
//! the encoder and the decoder. All gradients are computed by hand-written
//! backpropagation through time.

pub mod attention;
pub mod checkpoint;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod recurrent;
pub mod training;
pub mod vocab;
mod wire;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use encoder::{path_length, AttentionFlags, EncoderConfig, EncoderVariant};
pub use error::{Error, Result};
pub use model::{CaptionModel, ModelConfig};
pub use numerics::{Rng, Vector};
pub use training::{train, TrainConfig};
pub use vocab::Vocabulary;
