//! Multi-task sequence-to-sequence sentence encoders and a
//! frozen-representation evaluation suite.

pub mod config;
pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gru;
pub mod model;
pub mod nli_head;
pub mod numcore;
pub mod trainer;

pub use error::{Error, Result};
