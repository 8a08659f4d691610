//! Chaotic-map reservoir classifier.
//!
//! The input layer's weights are generated by a Hénon-type map instead of
//! being stored, so the reservoir can be evaluated by streaming the map
//! alongside the input. A small feedforward classifier is trained on the
//! reservoir output; map parameters are searched with a particle swarm.

pub mod analysis;
pub mod chaos;
pub mod dataio;
mod error;
pub mod matrix;
pub mod memory_report;
pub mod network;
pub mod reservoir;
pub mod rpso;

pub use error::{Error, IdxError, Result};
