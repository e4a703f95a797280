//! Joint intent detection and slot filling over a small Transformer encoder.

pub mod align;
pub mod crf;
pub mod data;
pub mod dropout;
pub mod encoder;
pub mod error;
pub mod features;
pub mod graph;
pub mod intent;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod slot;
pub mod tags;
pub mod tokenizer;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
